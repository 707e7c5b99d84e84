"""Tiny hand-built chains for detector tests."""

from zlink.ingest.raw import block_hash
from zlink.model import BlockRecord
from zlink.synth import seal_tx

T0 = 1_500_000_000


def build_chain(blocks, t0=T0):
    """``blocks`` is a list of ``(minute, [tx_joinsplits, ...])`` where each
    ``tx_joinsplits`` is a list of (vpub_old, vpub_new).  Every block gets a
    coinbase; joinsplit txs have no transparent side."""
    out, prev, nonce = [], None, 0
    for h, (minute, txs) in enumerate(blocks):
        body = [seal_tx(True, outputs=[(1_250_000_000, f"miner{h}".encode())])]
        for js in txs:
            nonce += 1
            body.append(seal_tx(False, joinsplits=js, lock_time=nonce))
        t = t0 + 60 * minute
        bh = block_hash(prev, [tx.txid for tx in body], t)
        out.append(BlockRecord(h, bh, t, tuple(body)))
        prev = bh
    return out


def ref_of(blocks, height, pos=1, js_index=0):
    return (blocks[height].txs[pos].txid, js_index)
