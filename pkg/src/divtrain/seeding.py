"""Deterministic per-purpose seeds derived from one master seed.

``derive_seed(master, "member", 2)`` is the first 8 bytes (little-endian) of
SHA-256 over ``"<master>/member/2"``. Changing the seed of one purpose never
perturbs another.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels) -> int:
    key = "/".join([str(int(master))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
