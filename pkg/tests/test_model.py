from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from zlink.model import (COIN, MAX_MONEY, BlockRecord, ChainDataError, JoinSplitKind,
                         JoinSplitRecord, classify_joinsplit, format_amount, make_tx,
                         parse_amount, pool_delta)


@given(st.integers(min_value=0, max_value=MAX_MONEY))
def test_amount_text_round_trip(zat):
    assert parse_amount(format_amount(zat)) == zat


@given(st.integers(min_value=0, max_value=MAX_MONEY))
def test_format_matches_decimal(zat):
    # decimal arithmetic as an independent reference
    assert Decimal(format_amount(zat)) == Decimal(zat) / COIN


def test_parse_examples():
    assert parse_amount("3479.51898254") == 347951898254
    assert parse_amount("0.0001") == 10000
    assert parse_amount("12.5") == 1_250_000_000
    assert parse_amount("0") == 0
    assert parse_amount(".5") == 50_000_000


@pytest.mark.parametrize("bad", ["", ".", "-1", "1e8", "0.000000001", "21000000.00000001",
                                 "abc", "1.2.3"])
def test_parse_rejects(bad):
    with pytest.raises(ChainDataError):
        parse_amount(bad)


def test_whole_rendering_truncates():
    assert format_amount(347951898254, whole=True) == "3479"
    assert format_amount(-150_000_000, whole=True) == "-1"
    assert format_amount(-150_000_000) == "-1.5"


@pytest.mark.parametrize("old,new,kind", [
    (5, 0, JoinSplitKind.SHIELDING),
    (0, 5, JoinSplitKind.DESHIELDING),
    (0, 0, JoinSplitKind.FULLY_SHIELDED),
    (3, 4, JoinSplitKind.MIXED),
])
def test_classify(old, new, kind):
    js = JoinSplitRecord("ab" * 32, 0, old, new)
    assert classify_joinsplit(js) is kind
    assert pool_delta(js) == old - new


def test_amount_cap_enforced():
    with pytest.raises(ChainDataError):
        JoinSplitRecord("ab" * 32, 0, MAX_MONEY + 1, 0)


def test_block_needs_leading_coinbase():
    cb = make_tx("01" * 32, coinbase=True, outputs=[(100, b"\x01")])
    tx = make_tx("02" * 32, inputs=[("01" * 32, 0)], outputs=[(90, b"\x02")])
    BlockRecord(0, "aa" * 32, 1, (cb, tx))
    with pytest.raises(ChainDataError):
        BlockRecord(0, "aa" * 32, 1, (tx, cb))
    with pytest.raises(ChainDataError):
        BlockRecord(0, "aa" * 32, 1, (cb, cb))
