"""Byte-wise (t, n) Shamir secret sharing over GF(256).

Each byte of the datum is shared independently: a fresh random polynomial of
degree t-1 with the data byte as constant term, evaluated at the nonzero
x-coordinates 1..n. Share j therefore has the same length as the datum and
carries x = j, so the node index determines the evaluation point.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from . import gf256


class ShamirError(Exception):
    pass


class ThresholdOutOfRangeError(ShamirError):
    pass


class EmptyDatumError(ShamirError):
    pass


class InsufficientSharesError(ShamirError):
    pass


class DuplicateXCoordinateError(ShamirError):
    pass


class InconsistentSharesError(ShamirError):
    """Raised when extra shares do not lie on the interpolated polynomial.

    ``offending_x`` names the x-coordinates that failed the check against the
    polynomial defined by the t shares with the lowest x-coordinates.
    """

    def __init__(self, offending_x: list[int]):
        self.offending_x = offending_x
        super().__init__(f"shares at x={offending_x} are off the polynomial")


@dataclass(frozen=True)
class SecretShare:
    provider_index: int
    node_index: int
    x_coordinate: int
    y_values: bytes

    def __post_init__(self):
        if self.x_coordinate == 0:
            raise ShamirError("x-coordinate must be nonzero")


def create_shares(
    t: int,
    n: int,
    datum: bytes,
    rng: random.Random | int,
    provider_index: int = 1,
) -> list[SecretShare]:
    """Split ``datum`` into n shares, any t of which reconstruct it."""
    if t < 1 or t > n:
        raise ThresholdOutOfRangeError(f"need 1 <= t <= n, got t={t}, n={n}")
    if n > 255:
        raise ThresholdOutOfRangeError("at most 255 shares over GF(256)")
    if not datum:
        raise EmptyDatumError("datum must be nonempty")
    if isinstance(rng, int):
        rng = random.Random(rng)

    width = len(datum)
    coeffs = np.empty((t, width), dtype=np.uint8)
    coeffs[0] = np.frombuffer(datum, dtype=np.uint8)
    for k in range(1, t):
        coeffs[k] = np.frombuffer(rng.randbytes(width), dtype=np.uint8)

    xs = np.arange(1, n + 1, dtype=np.uint8)
    ys = gf256.poly_eval_many(coeffs, xs)
    return [
        SecretShare(
            provider_index=provider_index,
            node_index=x,
            x_coordinate=x,
            y_values=ys[x - 1].tobytes(),
        )
        for x in range(1, n + 1)
    ]


def _lagrange_weights_at(x_target: int, xs: list[int]) -> np.ndarray:
    """Coefficients w_i with p(x_target) = sum_i w_i * y_i over GF(256).

    Computed in the log domain; all pairwise differences are nonzero because
    the x-coordinates are distinct and nonzero.
    """
    x = np.asarray(xs, dtype=np.int64)
    k = len(xs)
    log_num = gf256.LOG[x_target ^ x].astype(np.int64)
    pair_logs = gf256.LOG[x.reshape(-1, 1) ^ x.reshape(1, -1)].astype(np.int64)
    np.fill_diagonal(pair_logs, 0)
    log_den = pair_logs.sum(axis=1)
    exponent = (log_num.sum() - log_num - log_den) % 255
    weights = gf256.EXP[exponent].astype(np.uint8)
    if k == 1:
        weights = np.array([1], dtype=np.uint8)
    return weights


def evaluate_at(shares: list[SecretShare], x_target: int) -> bytes:
    """Evaluate the polynomial interpolating exactly these shares at a point.

    Lets a holder of t shares predict what any further share must contain,
    which is how inconsistent shares are told apart from honest ones.
    """
    xs = [s.x_coordinate for s in shares]
    if len(set(xs)) != len(xs):
        raise DuplicateXCoordinateError(f"duplicate x-coordinates in {sorted(xs)}")
    if x_target in xs:
        return next(s for s in shares if s.x_coordinate == x_target).y_values
    y_matrix = np.stack(
        [np.frombuffer(s.y_values, dtype=np.uint8) for s in shares]
    )
    weights = _lagrange_weights_at(x_target, xs)
    return np.bitwise_xor.reduce(
        gf256.MUL[weights[:, None], y_matrix], axis=0
    ).tobytes()


def reconstruct(t: int, n: int, shares: list[SecretShare]) -> bytes:
    """Recover the datum from at least t shares.

    The t shares with the lowest x-coordinates define the polynomial; any
    further shares are checked against it and a mismatch raises
    :class:`InconsistentSharesError` naming the offending x-coordinates.
    """
    if t < 1 or t > n:
        raise ThresholdOutOfRangeError(f"need 1 <= t <= n, got t={t}, n={n}")
    if len(shares) < t:
        raise InsufficientSharesError(f"got {len(shares)} shares, need {t}")
    xs_all = [s.x_coordinate for s in shares]
    if len(set(xs_all)) != len(xs_all):
        raise DuplicateXCoordinateError(f"duplicate x-coordinates in {sorted(xs_all)}")
    widths = {len(s.y_values) for s in shares}
    if len(widths) != 1:
        raise ShamirError("shares have differing y-value lengths")

    ordered = sorted(shares, key=lambda s: s.x_coordinate)
    basis, extras = ordered[:t], ordered[t:]
    xs = [s.x_coordinate for s in basis]
    y_matrix = np.stack(
        [np.frombuffer(s.y_values, dtype=np.uint8) for s in basis]
    )

    weights = _lagrange_weights_at(0, xs)
    secret = np.bitwise_xor.reduce(gf256.MUL[weights[:, None], y_matrix], axis=0)

    offending = []
    for extra in extras:
        weights = _lagrange_weights_at(extra.x_coordinate, xs)
        predicted = np.bitwise_xor.reduce(
            gf256.MUL[weights[:, None], y_matrix], axis=0
        )
        if predicted.tobytes() != extra.y_values:
            offending.append(extra.x_coordinate)
    if offending:
        raise InconsistentSharesError(offending)

    return secret.tobytes()
