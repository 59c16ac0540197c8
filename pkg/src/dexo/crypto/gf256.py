"""Arithmetic in GF(2^8) with the AES reduction polynomial x^8+x^4+x^3+x+1.

Addition is XOR. Multiplication uses log/antilog tables built once at import
time from a generator of the multiplicative group. A full 256x256 product
table is also materialized as a numpy array so polynomial evaluation over
whole byte strings can be done without Python-level loops per byte.
"""

from __future__ import annotations

import numpy as np

REDUCING_POLY = 0x11B
GENERATOR = 0x03


def _mul_no_tables(a: int, b: int) -> int:
    """Carry-less multiply with reduction; used only to bootstrap the tables."""
    p = 0
    while b:
        if b & 1:
            p ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= REDUCING_POLY
    return p


def _build_tables() -> tuple[list[int], list[int]]:
    exp = [0] * 255
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _mul_no_tables(x, GENERATOR)
    return exp, log


_EXP, _LOG = _build_tables()

# exp table doubled so mul() can skip one modulo reduction
EXP = np.array(_EXP + _EXP, dtype=np.uint8)
LOG = np.array(_LOG, dtype=np.int32)

# MUL[a, b] = a * b in GF(256)
_la = LOG.reshape(256, 1) + LOG.reshape(1, 256)
MUL = EXP[_la % 255].copy()
MUL[0, :] = 0
MUL[:, 0] = 0


def add(a: int, b: int) -> int:
    return a ^ b


def mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(EXP[int(LOG[a]) + int(LOG[b])])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(EXP[255 - int(LOG[a])])


def div(a: int, b: int) -> int:
    return mul(a, inv(b))


def mul_bytes(c: int, v: np.ndarray) -> np.ndarray:
    """Scalar-vector product c * v over GF(256), v a uint8 array."""
    return MUL[c, v]


def poly_eval(coeffs: np.ndarray, x: int) -> np.ndarray:
    """Evaluate polynomials at a scalar x by Horner's rule.

    ``coeffs`` has shape (degree+1, width): row k holds the coefficient of
    x^k for ``width`` independent polynomials. Returns a (width,) array.
    """
    acc = coeffs[-1]
    for k in range(coeffs.shape[0] - 2, -1, -1):
        acc = MUL[x, acc] ^ coeffs[k]
    return acc


def poly_eval_many(coeffs: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Evaluate the same polynomial batch at several points at once.

    Returns shape (len(xs), width); row i is the evaluation at xs[i].
    """
    acc = np.broadcast_to(coeffs[-1], (len(xs), coeffs.shape[1])).copy()
    xs_col = xs.reshape(-1, 1)
    for k in range(coeffs.shape[0] - 2, -1, -1):
        acc = MUL[xs_col, acc] ^ coeffs[k]
    return acc
