"""Node JSON-RPC client (getblockcount / getblockhash / getblock verbosity 2)."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from decimal import Decimal
from typing import Callable, Iterator

import requests

from ..model import (BlockRecord, ChainDataError, JoinSplitRecord, OutPoint,
                     TxOut, TxRecord, check_amount, check_hash, parse_amount)

log = logging.getLogger(__name__)

RPC_WARMING_UP = -28


class RpcError(RuntimeError):
    """The endpoint failed or answered with an error."""


class RpcUnreachable(RpcError):
    pass


class HeightBeyondTip(RpcError):
    pass


class MalformedResponse(RpcError, ChainDataError):
    pass


class _Transient(Exception):
    pass


class RpcClient:
    """Minimal JSON-RPC 1.0 client with bounded retries.

    Credentials default to ``ZLINK_RPC_USER`` / ``ZLINK_RPC_PASSWORD``.
    """

    def __init__(self, url: str, user: str | None = None, password: str | None = None,
                 timeout: float = 30.0, retries: int = 4, backoff: float = 0.25):
        self.url = url
        user = user if user is not None else os.environ.get("ZLINK_RPC_USER")
        password = password if password is not None else os.environ.get("ZLINK_RPC_PASSWORD")
        self.auth = (user, password or "") if user else None
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session = requests.Session()
        self._next_id = 0

    def call(self, method: str, *params):
        payload = json.dumps({"jsonrpc": "1.0", "id": self._bump_id(),
                              "method": method, "params": list(params)})
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                return self._call_once(method, payload)
            except _Transient as e:
                if attempt == self.retries:
                    raise RpcUnreachable(f"{method}: {e}") from None
                log.warning("%s failed (%s), retrying in %.2fs", method, e, delay)
                time.sleep(delay)
                delay *= 2

    def _bump_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _call_once(self, method: str, payload: str):
        try:
            resp = self._session.post(self.url, data=payload, auth=self.auth,
                                      timeout=self.timeout,
                                      headers={"Content-Type": "application/json"})
        except (requests.ConnectionError, requests.Timeout) as e:
            raise _Transient(type(e).__name__) from None
        if resp.status_code >= 500 and not resp.content:
            raise _Transient(f"HTTP {resp.status_code}")
        if resp.status_code in (401, 403):
            raise RpcError(f"{method}: HTTP {resp.status_code} (check credentials)")
        try:
            body = json.loads(resp.text, parse_float=Decimal)
        except json.JSONDecodeError:
            if resp.status_code >= 500:
                raise _Transient(f"HTTP {resp.status_code}") from None
            raise MalformedResponse(f"{method}: response is not JSON") from None
        err = body.get("error") if isinstance(body, dict) else None
        if err:
            if isinstance(err, dict) and err.get("code") == RPC_WARMING_UP:
                raise _Transient("node warming up")
            raise RpcError(f"{method}: {err}")
        if not isinstance(body, dict) or "result" not in body:
            raise MalformedResponse(f"{method}: no result field")
        return body["result"]

    def tip_height(self) -> int:
        h = self.call("getblockcount")
        if not isinstance(h, int):
            raise MalformedResponse(f"getblockcount returned {h!r}")
        return h

    def block_hash(self, height: int) -> str:
        return self.call("getblockhash", height)

    def verbose_block(self, block_hash: str) -> dict:
        return self.call("getblock", block_hash, 2)

    def block_at(self, height: int) -> BlockRecord:
        block = block_from_verbose(self.verbose_block(self.block_hash(height)))
        if block.height != height:
            raise MalformedResponse(f"asked for height {height}, got {block.height}")
        return block


def _zat(obj: dict, key: str) -> int:
    if f"{key}Zat" in obj:
        return check_amount(obj[f"{key}Zat"], f"{key}Zat")
    if key not in obj:
        raise MalformedResponse(f"missing {key}")
    # parse_float=Decimal keeps this exact; str() of a Decimal may use exponent form
    return parse_amount(format(Decimal(obj[key]), "f"))


def tx_from_verbose(d: dict) -> TxRecord:
    try:
        txid = check_hash(d["txid"], "txid")
        vin = d.get("vin", [])
        coinbase = bool(vin) and "coinbase" in vin[0]
        inputs = () if coinbase else tuple(
            OutPoint(check_hash(i["txid"], "vin txid"), int(i["vout"])) for i in vin)
        outputs = tuple(
            TxOut(_zat(o, "value"), bytes.fromhex(o.get("scriptPubKey", {}).get("hex", "")))
            for o in sorted(d.get("vout", []), key=lambda o: o.get("n", 0)))
        joinsplits = tuple(
            JoinSplitRecord(txid, i, _zat(js, "vpub_old"), _zat(js, "vpub_new"))
            for i, js in enumerate(d.get("vjoinsplit", [])))
        return TxRecord(txid, coinbase, inputs, outputs, joinsplits,
                        int(d.get("locktime", 0)))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ChainDataError):
            raise
        raise MalformedResponse(f"bad transaction object: {e!r}") from None


def block_from_verbose(d: dict) -> BlockRecord:
    try:
        txs = d["tx"]
        if txs and not isinstance(txs[0], dict):
            raise MalformedResponse("getblock must be called with verbosity 2")
        return BlockRecord(int(d["height"]), check_hash(d["hash"], "block hash"),
                           int(d["time"]), tuple(tx_from_verbose(t) for t in txs))
    except (KeyError, TypeError) as e:
        raise MalformedResponse(f"bad block object: {e!r}") from None


def block_to_verbose(block: BlockRecord, prev_hash: str | None = None) -> dict:
    """Render a record the way a node answers ``getblock <hash> 2`` (subset).

    Coin values are floats, as on the wire; the exact ``*Zat`` twins are what
    :func:`block_from_verbose` prefers.
    """
    txs = []
    for tx in block.txs:
        vin = ([{"coinbase": "", "sequence": 4294967295}] if tx.is_coinbase else
               [{"txid": i.txid, "vout": i.vout, "sequence": 4294967295} for i in tx.inputs])
        txs.append({
            "txid": tx.txid,
            "version": 2 if tx.joinsplits else 1,
            "locktime": tx.lock_time,
            "vin": vin,
            "vout": [{"value": o.value / 100_000_000, "valueZat": o.value, "n": n,
                      "scriptPubKey": {"hex": o.script_id.hex()}}
                     for n, o in enumerate(tx.outputs)],
            "vjoinsplit": [{"vpub_old": js.vpub_old / 100_000_000,
                            "vpub_oldZat": js.vpub_old,
                            "vpub_new": js.vpub_new / 100_000_000,
                            "vpub_newZat": js.vpub_new} for js in tx.joinsplits],
        })
    out = {"hash": block.hash, "height": block.height, "time": block.time, "tx": txs}
    if prev_hash:
        out["previousblockhash"] = prev_hash
    return out


def iter_range(client: RpcClient, from_height: int, to_height: int,
               workers: int = 4, chunk: int = 64) -> Iterator[BlockRecord]:
    """Yield blocks from..to inclusive in height order.

    Requests within a chunk run concurrently on at most ``workers`` threads.
    Callers that commit as they consume get resumability for free: restart
    from the last committed height + 1.
    """
    if from_height < 0 or to_height < from_height:
        raise ValueError(f"invalid range {from_height}..{to_height}")
    tip = client.tip_height()
    if to_height > tip:
        raise HeightBeyondTip(f"height {to_height} is beyond node tip {tip}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for start in range(from_height, to_height + 1, chunk):
            heights = range(start, min(start + chunk, to_height + 1))
            yield from pool.map(client.block_at, heights)


def fetch_range(client: RpcClient, from_height: int, to_height: int, workers: int = 4,
                on_block: Callable[[BlockRecord], None] | None = None):
    from . import IngestBatch, Source

    blocks = []
    for block in iter_range(client, from_height, to_height, workers):
        if on_block:
            on_block(block)
        blocks.append(block)
    return IngestBatch(tuple(blocks), Source.RPC)
