"""Chain-wide shielded-usage measurements over a snapshot.

Percentages are kept as :class:`fractions.Fraction` and only rounded when
rendered, so reports are reproducible bit for bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from math import ceil

from .model import JoinSplitKind, TxRecord, classify_joinsplit
from .store import Snapshot


class EmptyChainError(ValueError):
    pass


def percent(part: int, whole: int) -> Fraction:
    """``100 * part / whole`` as an exact fraction; 0 when ``whole`` is 0."""
    return Fraction(100 * part, whole) if whole else Fraction(0)


def render_percent(p: Fraction, places: int = 1) -> str:
    q = Decimal(1).scaleb(-places)
    return str((Decimal(p.numerator) / Decimal(p.denominator)).quantize(q, ROUND_HALF_UP))


# -- per-block participation ---------------------------------------------------

@dataclass(frozen=True)
class BlockParticipation:
    height: int
    tx_count: int
    tx_with_joinsplit_count: int

    @property
    def percent_with_joinsplit(self) -> Fraction | None:
        if self.tx_count == 0:
            return None
        return percent(self.tx_with_joinsplit_count, self.tx_count)


def participation_bucket(p: Fraction | None) -> int:
    """Histogram bucket: 0 holds exactly 0% (and empty blocks); bucket k
    holds (k-1, k] percent."""
    return 0 if p is None else ceil(p)


def block_participation(snap: Snapshot) -> tuple[list[BlockParticipation], list[int]]:
    """Per-block joinsplit participation plus a 101-bucket histogram."""
    if snap.is_empty:
        raise EmptyChainError("no blocks in store")
    rows = []
    hist = [0] * 101
    for block in snap.blocks():
        row = BlockParticipation(block.height, len(block.txs),
                                 sum(1 for tx in block.txs if tx.joinsplits))
        rows.append(row)
        hist[participation_bucket(row.percent_with_joinsplit)] += 1
    return rows, hist


# -- census --------------------------------------------------------------------

@dataclass(frozen=True)
class CensusReport:
    total_blocks: int
    total_txs: int
    txs_with_joinsplit: int
    blocks_with_no_joinsplit_tx: int
    total_joinsplits: int
    kind_counts: dict
    total_shielded_inflow: int
    total_shielded_outflow: int

    @property
    def empty(self) -> bool:
        return self.total_blocks == 0

    @property
    def txs_with_joinsplit_pct(self) -> Fraction:
        return percent(self.txs_with_joinsplit, self.total_txs)

    @property
    def blocks_with_no_joinsplit_pct(self) -> Fraction:
        return percent(self.blocks_with_no_joinsplit_tx, self.total_blocks)

    def kind_pct(self, kind: JoinSplitKind) -> Fraction:
        return percent(self.kind_counts[kind], self.total_joinsplits)

    @property
    def with_shielding(self) -> int:
        """Joinsplits carrying a shielding part (mixed ones included)."""
        return self.kind_counts[JoinSplitKind.SHIELDING] + self.kind_counts[JoinSplitKind.MIXED]

    @property
    def with_deshielding(self) -> int:
        return self.kind_counts[JoinSplitKind.DESHIELDING] + self.kind_counts[JoinSplitKind.MIXED]


def census(snap: Snapshot) -> CensusReport:
    kinds = Counter({k: 0 for k in JoinSplitKind})
    n_blocks = n_txs = n_js_txs = n_free_blocks = n_js = inflow = outflow = 0
    for block in snap.blocks():
        n_blocks += 1
        block_has_js = False
        for tx in block.txs:
            n_txs += 1
            if tx.joinsplits:
                n_js_txs += 1
                block_has_js = True
            for js in tx.joinsplits:
                n_js += 1
                kinds[classify_joinsplit(js)] += 1
                inflow += js.vpub_old
                outflow += js.vpub_new
        if not block_has_js:
            n_free_blocks += 1
    return CensusReport(n_blocks, n_txs, n_js_txs, n_free_blocks, n_js, dict(kinds),
                        inflow, outflow)


# -- pool accounting -------------------------------------------------------------

@dataclass(frozen=True)
class PoolSeriesPoint:
    height: int
    shielded_pool: int
    total_supply: int

    @property
    def share(self) -> Fraction | None:
        if self.total_supply <= 0:
            return None
        return percent(self.shielded_pool, self.total_supply)


@dataclass(frozen=True)
class PoolSeries:
    points: list[PoolSeriesPoint]

    @property
    def final_pool(self) -> int:
        return self.points[-1].shielded_pool if self.points else 0

    @property
    def final_share(self) -> Fraction:
        if not self.points or self.points[-1].share is None:
            return Fraction(0)
        return self.points[-1].share

    @property
    def mean_share(self) -> Fraction:
        """Mean of the per-block pool share over blocks with non-zero supply."""
        shares = [p.share for p in self.points if p.share is not None]
        return sum(shares, Fraction(0)) / len(shares) if shares else Fraction(0)


def pool_series(snap: Snapshot) -> PoolSeries:
    """Running shielded-pool size next to supply minted by coinbases.

    Supply before the first stored block is unknown and taken as zero.
    """
    points = []
    pool = supply = 0
    for block in snap.blocks():
        for tx in block.txs:
            if tx.is_coinbase:
                supply += sum(o.value for o in tx.outputs)
            for js in tx.joinsplits:
                pool += js.vpub_old - js.vpub_new
        points.append(PoolSeriesPoint(block.height, pool, supply))
    return PoolSeries(points)


# -- fees ------------------------------------------------------------------------

class CoinbaseFeeError(ValueError):
    pass


def fee_of(snap: Snapshot, tx: TxRecord) -> int | None:
    """Transparent-plus-joinsplit fee, or ``None`` if an input cannot be resolved."""
    if tx.is_coinbase:
        raise CoinbaseFeeError(f"{tx.txid} is a coinbase; coinbases have no fee")
    total_in = 0
    for prev in tx.inputs:
        value = snap.resolve_input_value(prev.txid, prev.vout)
        if value is None:
            return None
        total_in += value
    total_in += sum(js.vpub_new for js in tx.joinsplits)
    total_out = sum(o.value for o in tx.outputs) + sum(js.vpub_old for js in tx.joinsplits)
    return total_in - total_out


@dataclass(frozen=True)
class FeeRow:
    fee: int
    count: int
    pct: Fraction


@dataclass
class FeeHistogram:
    counts: Counter = field(default_factory=Counter)
    total_fee_unknown: int = 0

    @property
    def total_known(self) -> int:
        return sum(self.counts.values())

    def table(self, top: int | None = None) -> list[FeeRow]:
        """Rows sorted by count descending, then fee ascending."""
        total = self.total_known
        rows = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if top is not None:
            rows = rows[:top]
        return [FeeRow(fee, n, percent(n, total)) for fee, n in rows]

    def top_fees(self, k: int = 5, positive_only: bool = True) -> list[int]:
        rows = [r for r in self.table() if r.fee > 0 or not positive_only]
        return [r.fee for r in rows[:k]]


def fee_histogram(snap: Snapshot) -> FeeHistogram:
    hist = FeeHistogram()
    for _, tx in snap.iter_txs():
        if tx.is_coinbase:
            continue
        fee = fee_of(snap, tx)
        if fee is None:
            hist.total_fee_unknown += 1
        else:
            hist.counts[fee] += 1
    return hist
