"""Toeplitz hash, the receive-side-scaling hash used by the simulated NIC.

The hash of an input bit string is the XOR, over every set input bit at
offset i, of the 32-bit window of the key starting at bit i. For IPv4/UDP
the input is the 12-byte concatenation src_ip | dst_ip | src_port | dst_port
in network byte order.

Only the simulated fabric may import this module; the stack proper never
sees the key (checked by the module-visibility audit in the test suite).
"""

KEY_LEN = 40


def toeplitz_hash(key, data):
    """Hash `data` (bytes) under `key` (bytes). Key must cover data + 32 bits."""
    key_bits = len(key) * 8
    if key_bits < len(data) * 8 + 32:
        raise ValueError("key too short for input")
    key_int = int.from_bytes(key, "big")
    top = key_bits - 32
    result = 0
    bit = 0
    for byte in data:
        mask = 0x80
        while mask:
            if byte & mask:
                result ^= (key_int >> (top - bit)) & 0xFFFFFFFF
            bit += 1
            mask >>= 1
    return result


class ToeplitzHasher:
    """Memoizing hasher for the fixed-layout 12-byte IPv4/UDP input.

    Per-frame hashing is the fabric's hottest path; contributions of each
    (byte position, byte value) pair are cached as they are first seen.
    """

    def __init__(self, key):
        if len(key) != KEY_LEN:
            raise ValueError("key must be %d bytes" % KEY_LEN)
        self._key_int = int.from_bytes(key, "big")
        self._top = KEY_LEN * 8 - 32
        self._memo = [dict() for _ in range(12)]

    def _contribution(self, pos, value):
        h = 0
        base = pos * 8
        for b in range(8):
            if value & (0x80 >> b):
                h ^= (self._key_int >> (self._top - (base + b))) & 0xFFFFFFFF
        return h

    def hash_bytes(self, data):
        if len(data) != 12:
            raise ValueError("expected 12-byte four-tuple input")
        result = 0
        for pos, value in enumerate(data):
            if not value:
                continue
            memo = self._memo[pos]
            h = memo.get(value)
            if h is None:
                h = self._contribution(pos, value)
                memo[value] = h
            result ^= h
        return result
