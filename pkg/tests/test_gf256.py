"""Field axioms for GF(256), cross-checked against a table-free oracle."""

from hypothesis import given
from hypothesis import strategies as st

from dexo.crypto import gf256

elements = st.integers(min_value=0, max_value=255)
nonzero = st.integers(min_value=1, max_value=255)


def mul_oracle(a: int, b: int) -> int:
    """Russian-peasant carry-less multiply, independent of the log tables."""
    p = 0
    while b:
        if b & 1:
            p ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
    return p


def test_mul_matches_oracle_exhaustively():
    for a in range(256):
        for b in range(256):
            assert gf256.mul(a, b) == mul_oracle(a, b)
            assert gf256.MUL[a, b] == mul_oracle(a, b)


@given(elements, elements, elements)
def test_mul_associative(a, b, c):
    assert gf256.mul(gf256.mul(a, b), c) == gf256.mul(a, gf256.mul(b, c))


@given(elements, elements, elements)
def test_mul_distributes_over_add(a, b, c):
    assert gf256.mul(a, b ^ c) == gf256.mul(a, b) ^ gf256.mul(a, c)


@given(nonzero)
def test_inverse(a):
    assert gf256.mul(a, gf256.inv(a)) == 1


@given(elements)
def test_identity(a):
    assert gf256.mul(a, 1) == a
    assert gf256.mul(a, 0) == 0


def test_inv_of_zero_rejected():
    import pytest

    with pytest.raises(ZeroDivisionError):
        gf256.inv(0)
