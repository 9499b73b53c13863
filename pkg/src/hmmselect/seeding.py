"""Deterministic RNG construction and seed derivation.

Every stochastic routine in the package takes an explicit 64-bit seed and
builds its own generator, so results are bit-reproducible and independent
runs never share state.  The generator is numpy's Philox (4x64 counter-based);
a reference output vector is frozen in the test suite so the stream can be
checked against other implementations.

Derived seeds (per replication, per sub-task) come from splitmix64, applied as

    derive_seed(master, index) = splitmix64(splitmix64(master) ^ splitmix64(index))

which gives random access to child streams without sequential scanning.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(z: int) -> int:
    """One splitmix64 mixing step (Steele, Lea & Flood's finalizer)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Child seed for stream `index` under `master`; collision-resistant mixing."""
    return splitmix64(splitmix64(master & _MASK64) ^ splitmix64(index & _MASK64))


def make_rng(seed: int) -> np.random.Generator:
    """Generator backed by the Philox 4x64 counter-based bit generator."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))
