"""Deterministic per-module sub-seed derivation.

All randomness in a run flows from one 64-bit scenario seed. Each module
draws from its own ``numpy`` generator seeded with
``seed XOR sha256(module_name)[:8]`` so that module-level tests and the
end-to-end pipeline see identical streams.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, module_name: str) -> int:
    """Sub-seed for ``module_name``: seed XOR leading 8 bytes of its SHA-256."""
    digest = hashlib.sha256(module_name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return (int(seed) ^ tag) & _MASK64


def module_rng(seed: int, module_name: str) -> np.random.Generator:
    """PCG64 generator for one module's randomness within a run."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, module_name)))
