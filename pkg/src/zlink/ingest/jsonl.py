"""Line-delimited JSON interchange: one block object per line.

Schema::

    {"height": int, "hash": hex64, "time": int,
     "txs": [{"txid": hex64, "coinbase": bool,
              "vin": [{"txid": hex64, "vout": int}],
              "vout": [{"value_zat": int, "script_id": hex}],
              "joinsplits": [{"vpub_old_zat": int, "vpub_new_zat": int}],
              "lock_time": int}]}

``lock_time`` is optional (default 0).  Amounts may alternatively be given
as exact decimal coin strings under ``value`` / ``vpub_old`` / ``vpub_new``.
Unknown keys are ignored.  Declared txids and hashes are trusted.
"""

from __future__ import annotations

import json
from typing import IO, Iterable

from ..model import (BlockRecord, ChainDataError, JoinSplitRecord, OutPoint,
                     TxOut, TxRecord, check_amount, check_hash, parse_amount)


class SchemaError(ChainDataError):
    pass


def _require(obj: dict, key: str, kind, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}")
    value = obj[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise SchemaError(f"{where}: {key!r} has wrong type {type(value).__name__}")
    return value


def _amount(obj: dict, name: str, where: str) -> int:
    zat_key = f"{name}_zat"
    if zat_key in obj:
        value = obj[zat_key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: {zat_key!r} must be an integer")
        return check_amount(value, zat_key)
    if name in obj:
        value = obj[name]
        if not isinstance(value, str):
            raise SchemaError(f"{where}: {name!r} must be a decimal string "
                              "(floats are not exact)")
        return parse_amount(value)
    raise SchemaError(f"{where}: missing key {zat_key!r}")


def tx_from_dict(d: dict, where: str = "tx") -> TxRecord:
    txid = check_hash(_require(d, "txid", str, where), "txid")
    where = f"{where} {txid[:16]}"
    coinbase = _require(d, "coinbase", bool, where)
    vin = _require(d, "vin", list, where)
    inputs = []
    for i, item in enumerate(vin):
        w = f"{where} vin[{i}]"
        if coinbase:
            continue
        inputs.append(OutPoint(check_hash(_require(item, "txid", str, w), "vin txid"),
                               _require(item, "vout", int, w)))
    outputs = []
    for i, item in enumerate(_require(d, "vout", list, where)):
        w = f"{where} vout[{i}]"
        script = _require(item, "script_id", str, w)
        try:
            script_id = bytes.fromhex(script)
        except ValueError:
            raise SchemaError(f"{w}: script_id is not hex") from None
        outputs.append(TxOut(_amount(item, "value", w), script_id))
    joinsplits = []
    for i, item in enumerate(_require(d, "joinsplits", list, where)):
        w = f"{where} joinsplits[{i}]"
        joinsplits.append(JoinSplitRecord(txid, i, _amount(item, "vpub_old", w),
                                          _amount(item, "vpub_new", w)))
    lock_time = d.get("lock_time", 0)
    if isinstance(lock_time, bool) or not isinstance(lock_time, int):
        raise SchemaError(f"{where}: lock_time must be an integer")
    return TxRecord(txid, coinbase, tuple(inputs), tuple(outputs), tuple(joinsplits),
                    lock_time)


def block_from_dict(d: dict, where: str = "block") -> BlockRecord:
    height = _require(d, "height", int, where)
    where = f"{where} (height {height})"
    block_hash = check_hash(_require(d, "hash", str, where), "block hash")
    time = _require(d, "time", int, where)
    txs = tuple(tx_from_dict(t, f"{where} tx[{i}]")
                for i, t in enumerate(_require(d, "txs", list, where)))
    seen = set()
    for tx in txs:
        if tx.txid in seen:
            raise SchemaError(f"{where}: duplicate txid {tx.txid}")
        seen.add(tx.txid)
    return BlockRecord(height, block_hash, time, txs)


def tx_to_dict(tx: TxRecord) -> dict:
    return {
        "txid": tx.txid,
        "coinbase": tx.is_coinbase,
        "vin": [{"txid": i.txid, "vout": i.vout} for i in tx.inputs],
        "vout": [{"value_zat": o.value, "script_id": o.script_id.hex()} for o in tx.outputs],
        "joinsplits": [{"vpub_old_zat": js.vpub_old, "vpub_new_zat": js.vpub_new}
                       for js in tx.joinsplits],
        "lock_time": tx.lock_time,
    }


def block_to_dict(block: BlockRecord) -> dict:
    return {"height": block.height, "hash": block.hash, "time": block.time,
            "txs": [tx_to_dict(tx) for tx in block.txs]}


def dumps_block(block: BlockRecord) -> str:
    return json.dumps(block_to_dict(block), separators=(",", ":"))


def read_jsonl(stream: IO[str]):
    """Read and validate a JSONL chain; returns an :class:`IngestBatch`."""
    from . import IngestBatch, Source

    blocks = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"line {lineno}: invalid JSON ({e.msg})") from None
        try:
            block = block_from_dict(obj, f"line {lineno}")
        except ChainDataError as e:
            msg = str(e)
            raise type(e)(msg if msg.startswith("line") else f"line {lineno}: {msg}") from None
        if blocks and block.height <= blocks[-1].height:
            raise SchemaError(f"line {lineno}: height {block.height} does not follow "
                              f"{blocks[-1].height}")
        blocks.append(block)
    return IngestBatch(tuple(blocks), Source.JSONL)


def write_jsonl(blocks: Iterable[BlockRecord], stream: IO[str]) -> int:
    n = 0
    for block in blocks:
        stream.write(dumps_block(block) + "\n")
        n += 1
    return n
