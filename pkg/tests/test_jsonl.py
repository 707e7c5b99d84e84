import io
import json

import pytest

from zlink.ingest import read_jsonl, write_jsonl
from zlink.ingest.jsonl import SchemaError, block_from_dict, block_to_dict
from zlink.model import ChainDataError


def _line(block):
    return json.dumps(block) + "\n"


def test_round_trip(small_chain):
    batch, _ = small_chain
    buf = io.StringIO()
    assert write_jsonl(batch.blocks, buf) == len(batch.blocks)
    buf.seek(0)
    assert read_jsonl(buf).blocks == batch.blocks


def test_decimal_and_zat_forms_agree(small_chain):
    batch, _ = small_chain
    block = batch.blocks[5]
    d = block_to_dict(block)
    for tx in d["txs"]:
        for o in tx["vout"]:
            zat = o.pop("value_zat")
            o["value"] = f"{zat // 10**8}.{zat % 10**8:08d}"
    assert block_from_dict(d) == block


def test_appendix_fixture_reads(appendix_batch):
    assert len(appendix_batch.blocks) == 12
    js = [j for b in appendix_batch.blocks for tx in b.txs for j in tx.joinsplits]
    assert {j.vpub_old for j in js} >= {347951898254, 1214981195, 377326919, 22001805591,
                                        67209594, 638050000}


def test_float_amounts_rejected():
    block = {"height": 0, "hash": "aa" * 32, "time": 1, "txs": [
        {"txid": "bb" * 32, "coinbase": True, "vin": [],
         "vout": [{"value": 12.5, "script_id": ""}], "joinsplits": []}]}
    with pytest.raises(SchemaError, match="decimal string"):
        read_jsonl(io.StringIO(_line(block)))


def test_missing_key_reports_line():
    good = {"height": 0, "hash": "aa" * 32, "time": 1, "txs": [
        {"txid": "bb" * 32, "coinbase": True, "vin": [],
         "vout": [{"value_zat": 1, "script_id": ""}], "joinsplits": []}]}
    bad = dict(good, height=1)
    del bad["time"]
    with pytest.raises(SchemaError, match="line 2.*time"):
        read_jsonl(io.StringIO(_line(good) + _line(bad)))


def test_heights_must_increase():
    b = {"height": 3, "hash": "aa" * 32, "time": 1, "txs": [
        {"txid": "bb" * 32, "coinbase": True, "vin": [],
         "vout": [], "joinsplits": []}]}
    with pytest.raises(SchemaError, match="does not follow"):
        read_jsonl(io.StringIO(_line(b) + _line(b)))


def test_bad_json_and_bad_hash():
    with pytest.raises(SchemaError, match="invalid JSON"):
        read_jsonl(io.StringIO("{nope\n"))
    b = {"height": 0, "hash": "XYZ", "time": 1, "txs": []}
    with pytest.raises(ChainDataError):
        read_jsonl(io.StringIO(_line(b)))


def test_blank_lines_skipped(small_chain):
    batch, _ = small_chain
    buf = io.StringIO()
    write_jsonl(batch.blocks[:3], buf)
    text = buf.getvalue().replace("\n", "\n\n")
    assert read_jsonl(io.StringIO(text)).blocks == batch.blocks[:3]
