"""PHOTON-256/32/32 sponge hash.

The 288-bit state is a 6x6 matrix of bytes. Every message block of 32 bits
is XORed into the first four cells of the top row, followed by the 12-round
AES-like permutation (AddConstants, SubCells, ShiftRows, MixColumnsSerial).
The digest is squeezed 32 bits at a time from the same four cells.

Internally a column is packed into a 48-bit int (row ``i`` in byte ``i``) so
SubCells and MixColumns fold into six 256-entry lookup tables.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import EncodingError

DIGEST_SIZE = 32
RATE = 4  # bytes absorbed / squeezed per permutation call
ROUNDS = 12
D = 6

# AES S-box, used verbatim by the 8-bit-cell PHOTON instances.
SBOX = bytes.fromhex(
    "637c777bf26b6fc53001672bfed7ab76ca82c97dfa5947f0add4a2af9ca472c0"
    "b7fd9326363ff7cc34a5e5f171d8311504c723c31896059a071280e2eb27b275"
    "09832c1a1b6e5aa0523bd6b329e32f8453d100ed20fcb15b6acbbe394a4c58cf"
    "d0efaafb434d338545f9027f503c9fa851a3408f929d38f5bcb6da2110fff3d2"
    "cd0c13ec5f974417c4a77e3d645d197360814fdc222a908846eeb814de5e0bdb"
    "e0323a0a4906245cc2d3ac629195e479e7c8376d8dd54ea96c56f4ea657aae08"
    "ba78252e1ca6b4c6e8dd741f4bbd8b8a703eb5664803f60e613557b986c11d9e"
    "e1f8981169d98e949b1e87e9ce5528df8ca1890dbfe6426841992d0fb054bb16"
)

ROUND_CONSTANTS = (1, 3, 7, 14, 13, 11, 6, 12, 9, 2, 5, 10)
INTERNAL_CONSTANTS = (0, 1, 3, 7, 6, 4)
SERIAL_ROW = (2, 3, 1, 2, 1, 4)

# IV: zero state except the last three cells, which hold n/4, r and r'.
IV_TAIL = (256 // 4, 32, 32)


def gf_mul(a: int, b: int) -> int:
    """Multiply in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
        b >>= 1
    return r


def _mix_matrix() -> list[list[int]]:
    # A = Serial(z0..z5)^6: shift-up companion matrix raised to the 6th power.
    serial = [[int(j == i + 1) for j in range(D)] for i in range(D - 1)]
    serial.append(list(SERIAL_ROW))
    out = [[int(i == j) for j in range(D)] for i in range(D)]
    for _ in range(D):
        out = [
            [
                _xor_all(gf_mul(serial[i][k], out[k][j]) for k in range(D))
                for j in range(D)
            ]
            for i in range(D)
        ]
    return out


def _xor_all(values: Iterable[int]) -> int:
    acc = 0
    for v in values:
        acc ^= v
    return acc


MIX = _mix_matrix()

# _T[k][x]: packed column contribution of input row k holding x (before SubCells).
_T = [
    [
        sum(gf_mul(MIX[i][k], SBOX[x]) << (8 * i) for i in range(D))
        for x in range(256)
    ]
    for k in range(D)
]
_RC_COLUMN = tuple(
    sum((rc ^ INTERNAL_CONSTANTS[i]) << (8 * i) for i in range(D))
    for rc in ROUND_CONSTANTS
)
_IV = (0, 0, 0, IV_TAIL[0] << 40, IV_TAIL[1] << 40, IV_TAIL[2] << 40)


def _permute(c: list[int]) -> list[int]:
    T0, T1, T2, T3, T4, T5 = _T
    c0, c1, c2, c3, c4, c5 = c
    for rc in _RC_COLUMN:
        c0 ^= rc
        c0, c1, c2, c3, c4, c5 = (
            T0[c0 & 255] ^ T1[(c1 >> 8) & 255] ^ T2[(c2 >> 16) & 255]
            ^ T3[(c3 >> 24) & 255] ^ T4[(c4 >> 32) & 255] ^ T5[c5 >> 40],
            T0[c1 & 255] ^ T1[(c2 >> 8) & 255] ^ T2[(c3 >> 16) & 255]
            ^ T3[(c4 >> 24) & 255] ^ T4[(c5 >> 32) & 255] ^ T5[c0 >> 40],
            T0[c2 & 255] ^ T1[(c3 >> 8) & 255] ^ T2[(c4 >> 16) & 255]
            ^ T3[(c5 >> 24) & 255] ^ T4[(c0 >> 32) & 255] ^ T5[c1 >> 40],
            T0[c3 & 255] ^ T1[(c4 >> 8) & 255] ^ T2[(c5 >> 16) & 255]
            ^ T3[(c0 >> 24) & 255] ^ T4[(c1 >> 32) & 255] ^ T5[c2 >> 40],
            T0[c4 & 255] ^ T1[(c5 >> 8) & 255] ^ T2[(c0 >> 16) & 255]
            ^ T3[(c1 >> 24) & 255] ^ T4[(c2 >> 32) & 255] ^ T5[c3 >> 40],
            T0[c5 & 255] ^ T1[(c0 >> 8) & 255] ^ T2[(c1 >> 16) & 255]
            ^ T3[(c2 >> 24) & 255] ^ T4[(c3 >> 32) & 255] ^ T5[c4 >> 40],
        )
    return [c0, c1, c2, c3, c4, c5]


def permutation(cells: Sequence[Sequence[int]]) -> list[list[int]]:
    """Apply the 12-round permutation to a 6x6 byte matrix (row-major)."""
    cols = [sum(cells[i][j] << (8 * i) for i in range(D)) for j in range(D)]
    cols = _permute(cols)
    return [[(cols[j] >> (8 * i)) & 255 for j in range(D)] for i in range(D)]


def pad(message: bytes) -> bytes:
    """Append a single 1 bit and zeros up to a multiple of the rate."""
    return message + b"\x80" + bytes(-(len(message) + 1) % RATE)


class SpongeState:
    """Incremental PHOTON-256 hashing.

    ``update`` may be called any number of times while absorbing; ``digest``
    pads, switches to squeezing and returns the 32-byte output. A state that
    has started squeezing cannot absorb again.
    """

    def __init__(self) -> None:
        self._cols = list(_IV)
        self._buf = b""
        self.absorbed_bits = 0
        self.phase = "absorbing"
        self._digest: bytes | None = None

    @property
    def cells(self) -> list[list[int]]:
        return [[(self._cols[j] >> (8 * i)) & 255 for j in range(D)] for i in range(D)]

    def copy(self) -> "SpongeState":
        """Independent clone; lets callers absorb a shared prefix once."""
        other = SpongeState.__new__(SpongeState)
        other._cols = list(self._cols)
        other._buf = self._buf
        other.absorbed_bits = self.absorbed_bits
        other.phase = self.phase
        other._digest = self._digest
        return other

    def _absorb_block(self, block: bytes) -> None:
        c = self._cols
        c[0] ^= block[0]
        c[1] ^= block[1]
        c[2] ^= block[2]
        c[3] ^= block[3]
        self._cols = _permute(c)

    def update(self, data: bytes) -> "SpongeState":
        if self.phase != "absorbing":
            raise ValueError("sponge is already squeezing")
        self.absorbed_bits += 8 * len(data)
        buf = self._buf + bytes(data)
        full = len(buf) - len(buf) % RATE
        for off in range(0, full, RATE):
            self._absorb_block(buf[off:off + RATE])
        self._buf = buf[full:]
        return self

    def digest(self) -> bytes:
        if self._digest is None:
            self._absorb_block(pad(self._buf))
            self._buf = b""
            self.phase = "squeezing"
            out = bytearray()
            c = self._cols
            while True:
                out += bytes((c[0] & 255, c[1] & 255, c[2] & 255, c[3] & 255))
                if len(out) >= DIGEST_SIZE:
                    break
                c = _permute(c)
            self._cols = c
            self._digest = bytes(out)
        return self._digest


def photon_hash(data: bytes) -> bytes:
    """PHOTON-256 digest of ``data``."""
    cols = list(_IV)
    padded = pad(bytes(data))
    for off in range(0, len(padded), RATE):
        cols[0] ^= padded[off]
        cols[1] ^= padded[off + 1]
        cols[2] ^= padded[off + 2]
        cols[3] ^= padded[off + 3]
        cols = _permute(cols)
    out = bytearray()
    while True:
        out += bytes((cols[0] & 255, cols[1] & 255, cols[2] & 255, cols[3] & 255))
        if len(out) == DIGEST_SIZE:
            return bytes(out)
        cols = _permute(cols)


# -- batched hashing -------------------------------------------------------

_T_NP = np.array(_T, dtype=np.uint64)
_RC_NP = np.array(_RC_COLUMN, dtype=np.uint64)
_SHIFTS = [np.uint64(8 * k) for k in range(D)]
_BYTE = np.uint64(255)


def _permute_np(cols: np.ndarray) -> np.ndarray:
    """Permutation over an (n, 6) array of packed columns."""
    c = [cols[:, j].copy() for j in range(D)]
    for rc in _RC_NP:
        c[0] ^= rc
        new = []
        for j in range(D):
            acc = _T_NP[0][c[j] & _BYTE]
            for k in range(1, D):
                acc ^= _T_NP[k][(c[(j + k) % D] >> _SHIFTS[k]) & _BYTE]
            new.append(acc)
        c = new
    return np.stack(c, axis=1)


def photon_hash_many(messages: Sequence[bytes], prefix: SpongeState | None = None) -> list[bytes]:
    """Hash many messages at once; messages with equal padded length share a batch.

    With ``prefix``, each digest is that of ``prefix's input || message``; the
    prefix must be absorbing and hold a whole number of rate blocks.
    """
    if prefix is None:
        start = np.array(_IV, dtype=np.uint64)
    else:
        if prefix.phase != "absorbing" or prefix._buf:
            raise ValueError("prefix must be absorbing on a block boundary")
        start = np.array(prefix._cols, dtype=np.uint64)
    out: list[bytes | None] = [None] * len(messages)
    groups: dict[int, list[int]] = {}
    padded = [pad(bytes(m)) for m in messages]
    for idx, p in enumerate(padded):
        groups.setdefault(len(p), []).append(idx)
    for length, idxs in groups.items():
        blocks = np.frombuffer(b"".join(padded[i] for i in idxs), dtype=np.uint8)
        blocks = blocks.reshape(len(idxs), length // RATE, RATE).astype(np.uint64)
        cols = np.tile(start, (len(idxs), 1))
        for b in range(length // RATE):
            cols[:, :RATE] ^= blocks[:, b, :]
            cols = _permute_np(cols)
        squeezed = []
        for s in range(DIGEST_SIZE // RATE):
            if s:
                cols = _permute_np(cols)
            squeezed.append((cols[:, :RATE] & _BYTE).astype(np.uint8))
        digests = np.concatenate(squeezed, axis=1)
        for row, i in zip(digests, idxs):
            out[i] = row.tobytes()
    return out  # type: ignore[return-value]


# -- signature input serialization ------------------------------------------

LANE = 32
_SLOT = LANE + 1


def sig_concat(parts: Sequence[bytes]) -> bytes:
    """Serialize signature inputs as ``len || value || zero pad`` slots of 33 bytes.

    Each part may be at most 32 bytes; the length byte keeps the encoding
    injective even for parts with trailing zeros.
    """
    out = bytearray()
    for part in parts:
        part = bytes(part)
        if len(part) > LANE:
            raise EncodingError(f"signature part of {len(part)} bytes exceeds lane width {LANE}")
        out.append(len(part))
        out += part
        out += bytes(LANE - len(part))
    return bytes(out)


def split_sig_concat(data: bytes) -> list[bytes]:
    """Inverse of :func:`sig_concat`."""
    if len(data) % _SLOT:
        raise EncodingError("concatenation length is not a whole number of slots")
    parts = []
    for off in range(0, len(data), _SLOT):
        n = data[off]
        body = data[off + 1:off + _SLOT]
        if n > LANE or any(body[n:]):
            raise EncodingError("malformed signature slot")
        parts.append(bytes(body[:n]))
    return parts


def sign(*parts: bytes) -> bytes:
    """h(p1 || p2 || ...), the signature primitive of every protocol message."""
    return photon_hash(sig_concat(parts))


# -- test-vector files -------------------------------------------------------

def read_vectors(path) -> list[tuple[bytes, bytes]]:
    """Parse ``hex(input) SP hex(digest)`` lines; ``-`` stands for empty input, ``#`` starts a comment."""
    vectors = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            msg_hex, digest_hex = line.split()
            msg = b"" if msg_hex == "-" else bytes.fromhex(msg_hex)
            digest = bytes.fromhex(digest_hex)
            if len(digest) != DIGEST_SIZE:
                raise ValueError(f"digest of {len(digest)} bytes in {path}")
            vectors.append((msg, digest))
    return vectors
