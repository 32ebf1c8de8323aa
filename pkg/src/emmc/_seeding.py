"""Seed derivation: ``seed = master XOR h(keys)`` with a 64-bit BLAKE2b hash."""

import hashlib

SCHEME = "seed = master XOR blake2b-64(':'.join(str(k) for k in keys))"

_MASK = (1 << 64) - 1


def derive_seed(master, *keys):
    digest = hashlib.blake2b(":".join(str(k) for k in keys).encode(), digest_size=8).digest()
    return (int(master) & _MASK) ^ int.from_bytes(digest, "little")
