"""rssifuse: particle-filter fusion of multi-sensor RSSI into position and
velocity estimates, plus zone-state classification on top of them.

The pipeline has two stages: a sensor-fusion particle filter turns noisy
per-sensor RSSI series into per-tick position/velocity estimates with
variances, and KNN / random-forest / RBF-SVM classifiers map memory-windowed,
prescaled estimate features to discrete zone states.
"""

__version__ = "0.1.0"

from . import _kernels, channel, classify, evaluate, features, model, pf, synth  # noqa: F401
