"""Short-Weierstrass curve arithmetic over a 256-bit prime field.

Points are affine ``(x, y)`` tuples with ``None`` for the point at infinity.
Scalar multiplication runs in Jacobian coordinates with a 4-bit window.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

Point = tuple[int, int] | None


@dataclass(frozen=True)
class Curve:
    name: str
    p: int
    a: int
    b: int
    gx: int
    gy: int
    n: int

    @property
    def g(self) -> tuple[int, int]:
        return (self.gx, self.gy)

    def contains(self, pt: Point) -> bool:
        if pt is None:
            return False
        x, y = pt
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0


P256 = Curve(
    name="P-256",
    p=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFC,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    gx=0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
    gy=0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
    n=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
)

SECP256K1 = Curve(
    name="secp256k1",
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
    a=0,
    b=7,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
)

CURVES = {c.name: c for c in (P256, SECP256K1)}
DEFAULT_CURVE = P256


def _jdouble(c: Curve, X: int, Y: int, Z: int) -> tuple[int, int, int]:
    p = c.p
    if Y == 0 or Z == 0:
        return (0, 1, 0)
    YY = Y * Y % p
    S = 4 * X * YY % p
    ZZ = Z * Z % p
    M = (3 * X * X + c.a * ZZ * ZZ) % p
    X3 = (M * M - 2 * S) % p
    Y3 = (M * (S - X3) - 8 * YY * YY) % p
    Z3 = 2 * Y * Z % p
    return (X3, Y3, Z3)


def _jadd(c: Curve, P1: tuple[int, int, int], P2: tuple[int, int, int]) -> tuple[int, int, int]:
    p = c.p
    X1, Y1, Z1 = P1
    X2, Y2, Z2 = P2
    if Z1 == 0:
        return P2
    if Z2 == 0:
        return P1
    Z1Z1 = Z1 * Z1 % p
    Z2Z2 = Z2 * Z2 % p
    U1 = X1 * Z2Z2 % p
    U2 = X2 * Z1Z1 % p
    S1 = Y1 * Z2 * Z2Z2 % p
    S2 = Y2 * Z1 * Z1Z1 % p
    if U1 == U2:
        if S1 != S2:
            return (0, 1, 0)
        return _jdouble(c, X1, Y1, Z1)
    H = (U2 - U1) % p
    R = (S2 - S1) % p
    HH = H * H % p
    HHH = H * HH % p
    V = U1 * HH % p
    X3 = (R * R - HHH - 2 * V) % p
    Y3 = (R * (V - X3) - S1 * HHH) % p
    Z3 = H * Z1 * Z2 % p
    return (X3, Y3, Z3)


def _to_affine(c: Curve, P: tuple[int, int, int]) -> Point:
    X, Y, Z = P
    if Z == 0:
        return None
    zi = pow(Z, -1, c.p)
    zi2 = zi * zi % c.p
    return (X * zi2 % c.p, Y * zi2 * zi % c.p)


def add(c: Curve, P: Point, Q: Point) -> Point:
    if P is None:
        return Q
    if Q is None:
        return P
    return _to_affine(c, _jadd(c, (P[0], P[1], 1), (Q[0], Q[1], 1)))


def negate(c: Curve, P: Point) -> Point:
    if P is None:
        return None
    return (P[0], (-P[1]) % c.p)


@lru_cache(maxsize=64)
def _window_table(c: Curve, pt: tuple[int, int]) -> tuple[tuple[int, int, int], ...]:
    base = (pt[0], pt[1], 1)
    table = [(0, 1, 0), base]
    for _ in range(14):
        table.append(_jadd(c, table[-1], base))
    return tuple(table)


def multiply(c: Curve, k: int, P: Point) -> Point:
    """k * P using a fixed 4-bit window."""
    if P is None:
        return None
    k %= c.n
    if k == 0:
        return None
    table = _window_table(c, P)
    acc = (0, 1, 0)
    for shift in range(((k.bit_length() + 3) // 4 - 1) * 4, -1, -4):
        if acc[2]:
            for _ in range(4):
                acc = _jdouble(c, *acc)
        nib = (k >> shift) & 0xF
        if nib:
            acc = _jadd(c, acc, table[nib])
    return _to_affine(c, acc)
