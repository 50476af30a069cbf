"""Deterministic seed derivation.

Every random draw in the package comes from a seed derived here, so a run is
a pure function of (root seed, data, config). Components can be ints or
strings; the hash is stable across platforms and Python processes.
"""

import hashlib


def derive_seed(*components) -> int:
    """Fold (root_seed, layer id, step counter, ...) into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for c in components:
        h.update(repr(c).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")
