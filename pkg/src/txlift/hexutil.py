"""Small helpers for hex, words and addresses."""

from __future__ import annotations

from Crypto.Hash import keccak as _keccak

WORD = 2**256
MASK256 = WORD - 1
MASK160 = 2**160 - 1
ZERO_ADDRESS = "0x" + "00" * 20


def keccak(data: bytes) -> bytes:
    h = _keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def selector(signature: str) -> str:
    """4-byte selector of a canonical signature, as 0x-prefixed hex."""
    return "0x" + keccak(signature.encode()).hex()[:8]


def event_topic(signature: str) -> int:
    return int.from_bytes(keccak(signature.encode()), "big")


def to_int(value) -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, (bytes, bytearray)):
        return int.from_bytes(value, "big") if value else 0
    s = str(value).strip()
    if s.startswith(("0x", "0X")):
        return int(s, 16) if len(s) > 2 else 0
    return int(s)


def to_bytes(value) -> bytes:
    if value is None:
        return b""
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    s = str(value)
    if s.startswith(("0x", "0X")):
        s = s[2:]
    if len(s) % 2:
        s = "0" + s
    return bytes.fromhex(s)


def word(value: int) -> bytes:
    return (value % WORD).to_bytes(32, "big")


def hexword(value: int) -> str:
    return hex(value % WORD)


def norm_address(value) -> str:
    """Lower-case 0x-prefixed 20-byte address from int, bytes or hex."""
    if isinstance(value, str) and value.startswith(("0x", "0X")) and len(value) == 42:
        return value.lower()
    return "0x" + (to_int(value) & MASK160).to_bytes(20, "big").hex()


def checksum(address: str) -> str:
    addr = norm_address(address)[2:]
    digest = keccak(addr.encode()).hex()
    return "0x" + "".join(c.upper() if int(d, 16) >= 8 else c for c, d in zip(addr, digest))


def looks_like_address(value: int) -> bool:
    """Heuristic: non-trivial value that fits in 160 bits with a high nibble set."""
    return 2**140 <= value <= MASK160


def signed(value: int) -> int:
    value %= WORD
    return value - WORD if value >= 2**255 else value
