"""Queryable chain index with an optional single-file SQLite backing.

The index is append-only: blocks are added in height order and nothing is
ever rewritten, so a :class:`Snapshot` only needs the tip height it was
taken at (plus copies of the amount key lists) to stay stable while the
writer keeps appending.
"""

from __future__ import annotations

import hashlib
import sqlite3
import threading
from bisect import bisect_right
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from filelock import FileLock, Timeout

from .ingest.jsonl import dumps_block
from .model import (BlockRecord, ChainDataError, JoinSplitRecord, OutPoint,
                    TxOut, TxRecord)

FORMAT_NAME = "zlink-store"
FORMAT_VERSION = 1


class StoreError(RuntimeError):
    pass


class StoreLockedError(StoreError):
    pass


class StoreFormatError(StoreError):
    pass


class HeightGapError(ChainDataError):
    pass


class DuplicateTxidError(ChainDataError):
    pass


class ConflictingBlockError(ChainDataError):
    """A block at an already-stored height differs from the stored one."""


class JoinSplitRef(NamedTuple):
    txid: str
    js_index: int
    height: int
    time: int

    @property
    def sort_key(self):
        return (self.height, self.txid, self.js_index)

    @property
    def ref(self) -> tuple[str, int]:
        return (self.txid, self.js_index)


class UnresolvedInput(NamedTuple):
    txid: str
    n: int
    height: int
    prev: OutPoint


class ChainIndex:
    """Writer-side in-memory index.  Read through :meth:`snapshot`."""

    def __init__(self):
        self.base_height: int | None = None
        self.blocks: list[BlockRecord] = []
        self.tx_loc: dict[str, tuple[int, int]] = {}
        self.shield: dict[int, list[JoinSplitRef]] = {}
        self.deshield: dict[int, list[JoinSplitRef]] = {}
        self.spent: dict[tuple[str, int], int] = {}
        self.unresolved: list[UnresolvedInput] = []
        self.n_joinsplits = 0
        self._tip = -1
        self._lock = threading.Lock()

    @property
    def tip_height(self) -> int:
        """Height of the last block, or -1 when empty."""
        return self._tip

    def check_next(self, block: BlockRecord) -> bool:
        """Validate ``block`` as the next append.  Returns False for an
        already-stored identical block (idempotent no-op)."""
        if self.base_height is not None and block.height <= self._tip:
            if block.height < self.base_height:
                raise HeightGapError(f"block {block.height} precedes stored range "
                                     f"starting at {self.base_height}")
            stored = self.blocks[block.height - self.base_height]
            if stored.hash != block.hash:
                raise ConflictingBlockError(
                    f"height {block.height}: stored {stored.hash}, got {block.hash}")
            return False
        if self.base_height is not None and block.height != self._tip + 1:
            raise HeightGapError(f"height gap: tip is {self._tip}, got block {block.height}")
        seen = set()
        for tx in block.txs:
            if tx.txid in self.tx_loc or tx.txid in seen:
                raise DuplicateTxidError(f"duplicate txid {tx.txid} at height {block.height}")
            seen.add(tx.txid)
        return True

    def add_block(self, block: BlockRecord) -> None:
        """Append a block already accepted by :meth:`check_next`."""
        h, t = block.height, block.time
        if self.base_height is None:
            self.base_height = h
        new_shield, new_deshield = [], []
        for pos, tx in enumerate(block.txs):
            self.tx_loc[tx.txid] = (h, pos)
            for n, prev in enumerate(tx.inputs):
                loc = self.tx_loc.get(prev.txid)
                if loc is not None:
                    ptx = block.txs[loc[1]] if loc[0] == h else self._tx_at(*loc)
                    if prev.vout < len(ptx.outputs):
                        self.spent.setdefault((prev.txid, prev.vout), h)
                        continue
                self.unresolved.append(UnresolvedInput(tx.txid, n, h, prev))
            for js in tx.joinsplits:
                ref = JoinSplitRef(tx.txid, js.js_index, h, t)
                if js.vpub_old > 0:
                    new_shield.append((js.vpub_old, ref))
                if js.vpub_new > 0:
                    new_deshield.append((js.vpub_new, ref))
            self.n_joinsplits += len(tx.joinsplits)
        new_shield.sort(key=lambda e: e[1].sort_key)
        new_deshield.sort(key=lambda e: e[1].sort_key)
        with self._lock:
            for amount, ref in new_shield:
                self.shield.setdefault(amount, []).append(ref)
            for amount, ref in new_deshield:
                self.deshield.setdefault(amount, []).append(ref)
            self.blocks.append(block)
            self._tip = h

    def _tx_at(self, height: int, pos: int) -> TxRecord:
        return self.blocks[height - self.base_height].txs[pos]

    def snapshot(self) -> "Snapshot":
        with self._lock:
            return Snapshot(self, self._tip, list(self.shield), list(self.deshield))


class Snapshot:
    """Read-only view of a :class:`ChainIndex` at a fixed tip."""

    def __init__(self, index: ChainIndex, tip: int, shield_keys: list, deshield_keys: list):
        self._index = index
        self.tip_height = tip
        self.base_height = index.base_height if index.base_height is not None else 0
        self._shield_keys = shield_keys
        self._deshield_keys = deshield_keys

    def __len__(self) -> int:
        return self.tip_height - self.base_height + 1 if self.tip_height >= 0 else 0

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    # -- blocks and transactions ---------------------------------------------

    def blocks(self) -> list[BlockRecord]:
        return self._index.blocks[:len(self)]

    def block(self, height: int) -> BlockRecord:
        if not self.base_height <= height <= self.tip_height:
            raise KeyError(height)
        return self._index.blocks[height - self.base_height]

    def tx_location(self, txid: str) -> tuple[int, int] | None:
        loc = self._index.tx_loc.get(txid)
        if loc is None or loc[0] > self.tip_height:
            return None
        return loc

    def tx(self, txid: str) -> TxRecord | None:
        loc = self.tx_location(txid)
        if loc is None:
            return None
        return self._index.blocks[loc[0] - self.base_height].txs[loc[1]]

    def iter_txs(self) -> Iterator[tuple[BlockRecord, TxRecord]]:
        for block in self.blocks():
            for tx in block.txs:
                yield block, tx

    def iter_joinsplits(self) -> Iterator[tuple[JoinSplitRecord, int, int]]:
        """All joinsplits in chain order as (record, height, block time)."""
        for block in self.blocks():
            for tx in block.txs:
                for js in tx.joinsplits:
                    yield js, block.height, block.time

    # -- amount indexes -------------------------------------------------------

    def _visible(self, bucket: list[JoinSplitRef] | None) -> list[JoinSplitRef]:
        if not bucket:
            return []
        n = len(bucket)
        if bucket[n - 1].height > self.tip_height:
            n = bisect_right(bucket, self.tip_height, hi=n, key=lambda r: r.height)
        return bucket[:n]

    def joinsplits_with_vpub_old(self, amount: int) -> list[JoinSplitRef]:
        """Shielding-side joinsplits with exactly this ``vpub_old``, in height order."""
        if amount <= 0:
            raise ValueError("amount must be positive")
        return self._visible(self._index.shield.get(amount))

    def joinsplits_with_vpub_new(self, amount: int) -> list[JoinSplitRef]:
        if amount <= 0:
            raise ValueError("amount must be positive")
        return self._visible(self._index.deshield.get(amount))

    def shielding_amounts(self) -> list[int]:
        """Distinct positive ``vpub_old`` values (insertion order; may include
        keys whose entries all lie past the tip of an older snapshot)."""
        return self._shield_keys

    def deshielding_amounts(self) -> list[int]:
        return self._deshield_keys

    def iter_shieldings(self) -> Iterator[tuple[int, list[JoinSplitRef]]]:
        shield = self._index.shield
        for amount in self._shield_keys:
            refs = self._visible(shield[amount])
            if refs:
                yield amount, refs

    # -- value resolution -----------------------------------------------------

    def resolve_input_value(self, prev_txid: str, prev_vout: int) -> int | None:
        """Value of a referenced output, spent or not; ``None`` when unknown."""
        tx = self.tx(prev_txid)
        if tx is None or not 0 <= prev_vout < len(tx.outputs):
            return None
        return tx.outputs[prev_vout].value

    def is_unspent(self, txid: str, vout: int) -> bool:
        tx = self.tx(txid)
        if tx is None or not 0 <= vout < len(tx.outputs):
            return False
        spent_at = self._index.spent.get((txid, vout))
        return spent_at is None or spent_at > self.tip_height

    def utxo(self) -> Iterator[tuple[OutPoint, TxOut]]:
        for _, tx in self.iter_txs():
            for n, out in enumerate(tx.outputs):
                if self.is_unspent(tx.txid, n):
                    yield OutPoint(tx.txid, n), out

    def unresolved_inputs(self) -> list[UnresolvedInput]:
        return [u for u in self._index.unresolved if u.height <= self.tip_height]

    @property
    def chain_id(self) -> str | None:
        """Hash of the first stored block; identifies which chain refs belong to."""
        return self._index.blocks[0].hash if len(self) else None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for block in self.blocks():
            h.update(dumps_block(block).encode())
            h.update(b"\n")
        return h.hexdigest()


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS blocks (
    height INTEGER PRIMARY KEY, hash TEXT NOT NULL, time INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS txs (
    txid TEXT PRIMARY KEY, height INTEGER NOT NULL, position INTEGER NOT NULL,
    coinbase INTEGER NOT NULL, lock_time INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS txins (
    txid TEXT NOT NULL, n INTEGER NOT NULL, prev_txid TEXT NOT NULL,
    prev_vout INTEGER NOT NULL, PRIMARY KEY (txid, n));
CREATE TABLE IF NOT EXISTS txouts (
    txid TEXT NOT NULL, n INTEGER NOT NULL, value INTEGER NOT NULL,
    script_id BLOB NOT NULL, PRIMARY KEY (txid, n));
CREATE TABLE IF NOT EXISTS joinsplits (
    txid TEXT NOT NULL, js_index INTEGER NOT NULL, vpub_old INTEGER NOT NULL,
    vpub_new INTEGER NOT NULL, PRIMARY KEY (txid, js_index));
CREATE INDEX IF NOT EXISTS txs_by_height ON txs (height, position);
"""


class Store:
    """Chain store.  ``path=None`` keeps everything in memory.

    A writable on-disk store holds an exclusive lock file next to the
    database for as long as it is open.
    """

    def __init__(self, path: str | Path | None = None, writable: bool = True):
        self.path = Path(path) if path is not None else None
        self.writable = writable
        self.index = ChainIndex()
        self._db: sqlite3.Connection | None = None
        self._lock: FileLock | None = None
        if self.path is not None:
            self._open_disk()

    def _open_disk(self) -> None:
        if self.writable:
            self._lock = FileLock(str(self.path) + ".lock")
            try:
                self._lock.acquire(timeout=0)
            except Timeout:
                raise StoreLockedError(f"{self.path} is locked by another writer") from None
        elif not self.path.exists():
            raise StoreError(f"no store at {self.path}")
        self._db = sqlite3.connect(str(self.path))
        self._db.executescript(_SCHEMA)
        meta = dict(self._db.execute("SELECT key, value FROM meta"))
        if not meta:
            if self.writable:
                with self._db:
                    self._db.executemany("INSERT INTO meta VALUES (?, ?)",
                                         [("format", FORMAT_NAME),
                                          ("version", str(FORMAT_VERSION))])
        elif meta.get("format") != FORMAT_NAME or meta.get("version") != str(FORMAT_VERSION):
            raise StoreFormatError(f"{self.path}: unsupported store format {meta}")
        for block in self._load_blocks():
            self.index.add_block(block)

    def _load_blocks(self) -> Iterator[BlockRecord]:
        db = self._db
        ins: dict[str, list] = {}
        for txid, prev, vout in db.execute(
                "SELECT txid, prev_txid, prev_vout FROM txins ORDER BY txid, n"):
            ins.setdefault(txid, []).append(OutPoint(prev, vout))
        outs: dict[str, list] = {}
        for txid, value, script in db.execute(
                "SELECT txid, value, script_id FROM txouts ORDER BY txid, n"):
            outs.setdefault(txid, []).append(TxOut(value, bytes(script)))
        jss: dict[str, list] = {}
        for txid, idx, old, new in db.execute(
                "SELECT txid, js_index, vpub_old, vpub_new FROM joinsplits "
                "ORDER BY txid, js_index"):
            jss.setdefault(txid, []).append(JoinSplitRecord(txid, idx, old, new))
        txs: dict[int, list] = {}
        for txid, height, coinbase, lock_time in db.execute(
                "SELECT txid, height, coinbase, lock_time FROM txs ORDER BY height, position"):
            txs.setdefault(height, []).append(TxRecord(
                txid, bool(coinbase), tuple(ins.get(txid, ())), tuple(outs.get(txid, ())),
                tuple(jss.get(txid, ())), lock_time))
        for height, block_hash, time in db.execute(
                "SELECT height, hash, time FROM blocks ORDER BY height"):
            yield BlockRecord(height, block_hash, time, tuple(txs.get(height, ())))

    def _persist(self, block: BlockRecord) -> None:
        db = self._db
        db.execute("INSERT INTO blocks VALUES (?, ?, ?)", (block.height, block.hash, block.time))
        db.executemany("INSERT INTO txs VALUES (?, ?, ?, ?, ?)", [
            (tx.txid, block.height, pos, int(tx.is_coinbase), tx.lock_time)
            for pos, tx in enumerate(block.txs)])
        db.executemany("INSERT INTO txins VALUES (?, ?, ?, ?)", [
            (tx.txid, n, i.txid, i.vout) for tx in block.txs for n, i in enumerate(tx.inputs)])
        db.executemany("INSERT INTO txouts VALUES (?, ?, ?, ?)", [
            (tx.txid, n, o.value, o.script_id)
            for tx in block.txs for n, o in enumerate(tx.outputs)])
        db.executemany("INSERT INTO joinsplits VALUES (?, ?, ?, ?)", [
            (js.txid, js.js_index, js.vpub_old, js.vpub_new)
            for tx in block.txs for js in tx.joinsplits])

    def append_blocks(self, blocks: Iterable[BlockRecord]) -> int:
        """Append blocks in height order; returns the new tip height.

        Already-stored identical blocks are skipped.  If a block is rejected,
        blocks before it in the same call stay committed.
        """
        if not self.writable:
            raise StoreError("store opened read-only")
        blocks = getattr(blocks, "blocks", blocks)
        try:
            for block in blocks:
                if not self.index.check_next(block):
                    continue
                if self._db is not None:
                    self._persist(block)
                self.index.add_block(block)
        finally:
            if self._db is not None:
                self._db.commit()
        return self.index.tip_height

    def count_new(self, blocks: Iterable[BlockRecord]) -> int:
        return sum(1 for b in blocks if b.height > self.index.tip_height)

    @property
    def tip_height(self) -> int:
        return self.index.tip_height

    def snapshot(self) -> Snapshot:
        return self.index.snapshot()

    def close(self) -> None:
        if self._db is not None:
            self._db.close()
            self._db = None
        if self._lock is not None:
            self._lock.release()
            self._lock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def snapshot_of(blocks: Iterable[BlockRecord]) -> Snapshot:
    """In-memory store holding ``blocks``; returns its snapshot."""
    store = Store()
    store.append_blocks(blocks)
    return store.snapshot()
