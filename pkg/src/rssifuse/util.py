"""Small shared helpers: stable seed derivation and atomic JSON output."""

from __future__ import annotations

import hashlib
import json
import os


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a master seed plus arbitrary string parts.

    Used to give every run / sweep cell / tree its own independent stream
    while keeping the whole pipeline reproducible from one master seed and
    independent of execution order.
    """
    blob = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(blob.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def write_json_atomic(path, obj):
    """Write JSON via a temp file + rename so readers never see a torn file."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
