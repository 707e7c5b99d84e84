"""Binary transaction/block codec for Sprout-era transactions.

Layout of a transaction (all integers little-endian)::

    version u32 | varint n_in | inputs | varint n_out | outputs | lock_time u32
    [version >= cfg.tx_version_with_joinsplits]
        varint n_js | joinsplit descriptions
        [n_js > 0] joinsplit pubkey | joinsplit signature

A joinsplit description is ``vpub_old u64 | vpub_new u64`` followed by the
opaque fields listed in :class:`WireLayoutConfig`, which are skipped.

Raw chain files are a sequence of length-prefixed block records::

    magic (4 bytes) | payload length u32 | height u32 | header (80 bytes)
    | varint n_tx | transactions

The txid and block hash are double-SHA256 of the serialized bytes, shown
byte-reversed as lowercase hex.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Sequence

from ..model import (BlockRecord, ChainDataError, JoinSplitRecord, OutPoint,
                     TxOut, TxRecord)

NETWORK_MAGIC = bytes.fromhex("24e92764")
NULL_HASH = bytes(32)
COINBASE_VOUT = 0xFFFFFFFF
BLOCK_VERSION = 4
BLOCK_BITS = 0x1F07FFFF


class WireFormatError(ChainDataError):
    """Raw bytes could not be decoded."""


class TruncatedError(WireFormatError):
    pass


class NonCanonicalVarintError(WireFormatError):
    pass


SPROUT_JOINSPLIT_FIELDS = (
    ("anchor", 32),
    ("nullifiers", 2 * 32),
    ("commitments", 2 * 32),
    ("ephemeral_key", 32),
    ("random_seed", 32),
    ("macs", 2 * 32),
    ("proof", 296),
    ("ciphertexts", 2 * 601),
)


@dataclass(frozen=True)
class WireLayoutConfig:
    """Byte lengths of the opaque parts of a joinsplit-bearing transaction.

    Defaults follow the Sprout (PHGR13 proof) layout, giving 1802-byte
    joinsplit descriptions.
    """
    joinsplit_fixed_field_sizes: tuple = SPROUT_JOINSPLIT_FIELDS
    tx_version_with_joinsplits: int = 2
    joinsplit_pubkey_size: int = 32
    joinsplit_sig_size: int = 64

    def __post_init__(self):
        sizes = [n for _, n in self.joinsplit_fixed_field_sizes]
        if not sizes or any(n <= 0 for n in sizes):
            raise ValueError("joinsplit field sizes must all be positive")
        if self.joinsplit_pubkey_size <= 0 or self.joinsplit_sig_size <= 0:
            raise ValueError("joinsplit pubkey/signature sizes must be positive")
        if self.tx_version_with_joinsplits < 1:
            raise ValueError("tx_version_with_joinsplits must be >= 1")

    @property
    def opaque_size(self) -> int:
        return sum(n for _, n in self.joinsplit_fixed_field_sizes)

    @property
    def joinsplit_size(self) -> int:
        return 16 + self.opaque_size


DEFAULT_LAYOUT = WireLayoutConfig()


def double_sha256(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def hash_to_hex(h: bytes) -> str:
    return h[::-1].hex()


def hex_to_hash(s: str) -> bytes:
    return bytes.fromhex(s)[::-1]


# -- compact size ------------------------------------------------------------

def parse_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode a compact-size integer at ``offset``; returns (value, bytes consumed)."""
    if offset >= len(data):
        raise TruncatedError("varint: no bytes available")
    first = data[offset]
    if first < 0xFD:
        return first, 1
    size, minimum = {0xFD: (2, 0xFD), 0xFE: (4, 0x10000), 0xFF: (8, 0x100000000)}[first]
    end = offset + 1 + size
    if end > len(data):
        raise TruncatedError("varint: truncated payload")
    value = int.from_bytes(data[offset + 1:end], "little")
    if value < minimum:
        raise NonCanonicalVarintError(f"varint {value} encoded in {size + 1} bytes")
    return value, size + 1


def pack_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint must be non-negative")
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + n.to_bytes(2, "little")
    if n <= 0xFFFFFFFF:
        return b"\xfe" + n.to_bytes(4, "little")
    if n <= 0xFFFFFFFFFFFFFFFF:
        return b"\xff" + n.to_bytes(8, "little")
    raise ValueError("varint overflow")


def pack_varbytes(b: bytes) -> bytes:
    return pack_varint(len(b)) + b


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}, "
                                 f"have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def skip(self, n: int) -> None:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}")
        self.pos += n

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "little")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "little")

    def varint(self) -> int:
        value, used = parse_varint(self.data, self.pos)
        self.pos += used
        return value

    def count(self, min_item_size: int) -> int:
        """Read an item count and reject counts the remaining bytes cannot hold."""
        n = self.varint()
        if n * min_item_size > len(self.data) - self.pos:
            raise TruncatedError(f"declared count {n} exceeds remaining bytes")
        return n

    def varbytes(self) -> bytes:
        return self.take(self.count(1))


# -- transactions ------------------------------------------------------------

def serialize_tx(tx: TxRecord, cfg: WireLayoutConfig = DEFAULT_LAYOUT) -> bytes:
    """Serialize a record.  Opaque joinsplit fields and input scripts are zero/empty."""
    version = cfg.tx_version_with_joinsplits if tx.joinsplits else 1
    parts = [struct.pack("<I", version)]
    if tx.is_coinbase:
        parts += [pack_varint(1), NULL_HASH, struct.pack("<I", COINBASE_VOUT),
                  pack_varbytes(b""), b"\xff\xff\xff\xff"]
    else:
        parts.append(pack_varint(len(tx.inputs)))
        for prev in tx.inputs:
            parts += [hex_to_hash(prev.txid), struct.pack("<I", prev.vout),
                      pack_varbytes(b""), b"\xff\xff\xff\xff"]
    parts.append(pack_varint(len(tx.outputs)))
    for out in tx.outputs:
        parts += [struct.pack("<Q", out.value), pack_varbytes(out.script_id)]
    parts.append(struct.pack("<I", tx.lock_time))
    if version >= cfg.tx_version_with_joinsplits:
        parts.append(pack_varint(len(tx.joinsplits)))
        opaque = bytes(cfg.opaque_size)
        for js in tx.joinsplits:
            parts += [struct.pack("<QQ", js.vpub_old, js.vpub_new), opaque]
        if tx.joinsplits:
            parts.append(bytes(cfg.joinsplit_pubkey_size + cfg.joinsplit_sig_size))
    return b"".join(parts)


def compute_txid(tx: TxRecord, cfg: WireLayoutConfig = DEFAULT_LAYOUT) -> str:
    return hash_to_hex(double_sha256(serialize_tx(tx, cfg)))


def _read_tx(r: _Reader, cfg: WireLayoutConfig) -> TxRecord:
    start = r.pos
    header = r.u32()
    if header >> 31:
        raise WireFormatError("overwintered transactions are not supported")
    version = header
    n_in = r.count(41)
    raw_inputs = []
    for _ in range(n_in):
        prev_hash = r.take(32)
        prev_n = r.u32()
        r.varbytes()
        r.skip(4)
        raw_inputs.append((prev_hash, prev_n))
    n_out = r.count(9)
    outputs = []
    for _ in range(n_out):
        value = r.u64()
        outputs.append(TxOut(value, r.varbytes()))
    lock_time = r.u32()
    js_amounts = []
    if version >= cfg.tx_version_with_joinsplits:
        n_js = r.count(cfg.joinsplit_size)
        for _ in range(n_js):
            js_amounts.append((r.u64(), r.u64()))
            r.skip(cfg.opaque_size)
        if n_js:
            r.skip(cfg.joinsplit_pubkey_size + cfg.joinsplit_sig_size)
    txid = hash_to_hex(double_sha256(r.data[start:r.pos]))

    is_coinbase = (len(raw_inputs) == 1 and raw_inputs[0][0] == NULL_HASH
                   and raw_inputs[0][1] == COINBASE_VOUT)
    inputs = () if is_coinbase else tuple(
        OutPoint(hash_to_hex(h), n) for h, n in raw_inputs)
    return TxRecord(
        txid=txid,
        is_coinbase=is_coinbase,
        inputs=inputs,
        outputs=tuple(outputs),
        joinsplits=tuple(JoinSplitRecord(txid, i, old, new)
                         for i, (old, new) in enumerate(js_amounts)),
        lock_time=lock_time,
    )


def parse_transaction(data: bytes, cfg: WireLayoutConfig = DEFAULT_LAYOUT
                      ) -> tuple[TxRecord, int]:
    """Parse one transaction from the start of ``data``; returns (record, bytes consumed)."""
    r = _Reader(bytes(data))
    tx = _read_tx(r, cfg)
    return tx, r.pos


# -- blocks ------------------------------------------------------------------

def merkle_root(txids: Sequence[str]) -> bytes:
    level = [hex_to_hash(t) for t in txids]
    if not level:
        return NULL_HASH
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [double_sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def block_header(prev_hash: str | None, txids: Sequence[str], time: int) -> bytes:
    prev = hex_to_hash(prev_hash) if prev_hash else NULL_HASH
    return (struct.pack("<I", BLOCK_VERSION) + prev + merkle_root(txids)
            + struct.pack("<III", time, BLOCK_BITS, 0))


def block_hash(prev_hash: str | None, txids: Sequence[str], time: int) -> str:
    """Hash of the synthetic 80-byte header used by raw chain files."""
    return hash_to_hex(double_sha256(block_header(prev_hash, txids, time)))


def serialize_block(block: BlockRecord, prev_hash: str | None,
                    cfg: WireLayoutConfig = DEFAULT_LAYOUT) -> bytes:
    payload = b"".join([
        struct.pack("<I", block.height),
        block_header(prev_hash, [tx.txid for tx in block.txs], block.time),
        pack_varint(len(block.txs)),
        *(serialize_tx(tx, cfg) for tx in block.txs),
    ])
    return NETWORK_MAGIC + struct.pack("<I", len(payload)) + payload


def parse_block(payload: bytes, cfg: WireLayoutConfig = DEFAULT_LAYOUT) -> BlockRecord:
    """Parse a block payload (the bytes following magic and length)."""
    r = _Reader(payload)
    height = r.u32()
    header = r.take(80)
    time = int.from_bytes(header[68:72], "little")
    n_tx = r.count(10)
    txs = tuple(_read_tx(r, cfg) for _ in range(n_tx))
    if r.pos != len(payload):
        raise WireFormatError(f"block {height}: {len(payload) - r.pos} trailing bytes")
    if header[36:68] != merkle_root([tx.txid for tx in txs]):
        raise WireFormatError(f"block {height}: merkle root mismatch")
    return BlockRecord(height=height, hash=hash_to_hex(double_sha256(header)),
                       time=time, txs=txs)


def iter_raw_payloads(stream: BinaryIO) -> Iterator[bytes]:
    while True:
        head = stream.read(8)
        if not head:
            return
        if len(head) < 8:
            raise TruncatedError("truncated block record header")
        if head[:4] != NETWORK_MAGIC:
            raise WireFormatError(f"bad magic {head[:4].hex()}")
        (length,) = struct.unpack("<I", head[4:])
        payload = stream.read(length)
        if len(payload) != length:
            raise TruncatedError("truncated block record payload")
        yield payload


def write_raw(blocks: Iterable[BlockRecord], stream: BinaryIO,
              cfg: WireLayoutConfig = DEFAULT_LAYOUT, prev_hash: str | None = None) -> int:
    n = 0
    for block in blocks:
        stream.write(serialize_block(block, prev_hash, cfg))
        prev_hash = block.hash
        n += 1
    return n
