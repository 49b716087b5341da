"""Stable 64-bit seed derivation for replicated experiments.

Replication seeds are SHA-256 hashes of the canonically packed inputs, so a
record's seed depends only on (base_seed, labels, n, replication index) and
never on execution order, platform, or other replications.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(base_seed: int, *parts) -> int:
    """hash64 of (base_seed, *parts); parts may be ints, floats, or strings."""
    hasher = hashlib.sha256()
    hasher.update(int(base_seed).to_bytes(8, "little", signed=True))
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("bool seed parts are ambiguous")
        if isinstance(part, int):
            hasher.update(b"i" + part.to_bytes(16, "little", signed=True))
        elif isinstance(part, float):
            hasher.update(b"f" + repr(part).encode())
        elif isinstance(part, str):
            hasher.update(b"s" + part.encode())
        else:
            raise TypeError(f"unsupported seed part type: {type(part)!r}")
    return int.from_bytes(hasher.digest()[:8], "little")
