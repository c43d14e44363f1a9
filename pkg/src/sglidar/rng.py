"""Deterministic randomness utilities.

Every stochastic choice in the package is derived from a user-visible seed
plus a string/int context path (e.g. ``("raycast", scan_index)``) through a
counter-based Philox generator. Streams are therefore splittable: draws for
one context never depend on how many draws another context made, which makes
scene generation and training byte-reproducible and safe to parallelize.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *context: object) -> tuple[int, int]:
    """Hash (seed, context...) into a 128-bit Philox key.

    Context elements may be ints or strings; the encoding is unambiguous
    (length-prefixed), so ("a", 1) and ("a1",) produce unrelated keys.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for part in context:
        if isinstance(part, (int, np.integer)):
            raw = b"i" + int(part).to_bytes(8, "little", signed=True)
        elif isinstance(part, str):
            enc = part.encode("utf-8")
            raw = b"s" + len(enc).to_bytes(4, "little") + enc
        else:
            raise TypeError(f"unsupported context element {part!r}")
        h.update(len(raw).to_bytes(4, "little") + raw)
    digest = h.digest()
    lo = int.from_bytes(digest[:8], "little")
    hi = int.from_bytes(digest[8:], "little")
    return lo, hi


def generator(seed: int, *context: object) -> np.random.Generator:
    """A fresh Philox generator for the given (seed, context) stream."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *context)))


def pixel_uniforms(seed: int, context: tuple, n: int, columns: int) -> np.ndarray:
    """Per-index uniforms in [0, 1): column c of row i is a pure function of
    (seed, context, i, c), independent of n.

    Used where the contract is "value keyed by (seed, pixel index)": the
    Philox counter is the flattened (index, column) position, so any subset
    of rows can be regenerated independently and in any order.
    """
    bits = np.random.Philox(key=derive_key(seed, *context)).random_raw(n * columns)
    u = (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return u.reshape(n, columns)


def pixel_normals(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Box-Muller transform of two uniform columns (guarding log(0))."""
    r = np.sqrt(-2.0 * np.log(np.maximum(u1, 1e-300)))
    return r * np.cos(2.0 * np.pi * u2)
