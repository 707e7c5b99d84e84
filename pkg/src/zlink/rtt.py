"""Round-trip transaction detection.

An exact round trip for amount ``a`` exists when, over the whole chain,
there is exactly one (shielding joinsplit, later deshielding joinsplit)
pair with ``vpub_old == a == vpub_new``.  Fee-adjusted round trips relax
the deshielded side to ``a - f`` for ``f`` drawn from sums of common fees,
restricted to pairs within a time window.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .model import parse_amount
from .store import JoinSplitRef, Snapshot

DEFAULT_BASE_FEES = tuple(parse_amount(s) for s in
                          ("0.0001", "0.001", "0.0002", "0.00009", "0.00005"))
DEFAULT_TOP_N = (10, 50, 250, 500, 1000)
DEFAULT_WINDOW_HOURS = 24

# Half-open minute intervals; None is +infinity.
TIME_BUCKETS = ((0, 5), (5, 15), (15, 30), (30, 60), (60, 120), (120, 1440), (1440, None))


class MatchKind(enum.Enum):
    EXACT = "exact"
    FEE1 = "fee1"
    FEE2 = "fee2"


@dataclass(frozen=True)
class RttMatch:
    shield: JoinSplitRef
    deshield: JoinSplitRef
    amount: int
    kind: MatchKind
    fee_adjustment: int = 0
    fee_parts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.deshield.height <= self.shield.height:
            raise ValueError("deshield must be in a later block than shield")
        if (self.kind is MatchKind.EXACT) != (self.fee_adjustment == 0):
            raise ValueError("exact matches carry no fee adjustment and vice versa")
        if self.fee_parts and sum(self.fee_parts) != self.fee_adjustment:
            raise ValueError("fee parts do not sum to the adjustment")

    @property
    def deshield_amount(self) -> int:
        return self.amount - self.fee_adjustment

    @property
    def delta_blocks(self) -> int:
        return self.deshield.height - self.shield.height

    @property
    def delta_minutes(self) -> int:
        # clock skew can make this negative even though height increases
        return max(0, (self.deshield.time - self.shield.time) // 60)

    @property
    def pair(self) -> tuple[tuple[str, int], tuple[str, int]]:
        return (self.shield.ref, self.deshield.ref)


def canonical_order(matches: Iterable[RttMatch]) -> list[RttMatch]:
    """Sort by shield height, then amount, then refs."""
    return sorted(matches, key=lambda m: (m.shield.height, m.amount, m.shield.txid,
                                          m.shield.js_index, m.fee_adjustment,
                                          m.deshield.sort_key))


# -- exact ---------------------------------------------------------------------

def _unique_later_pair(shields: Sequence[JoinSplitRef], deshields: Sequence[JoinSplitRef]):
    """Return the only (s, d) with d.height > s.height, or None if there are 0 or >= 2.

    Both inputs are sorted by height.
    """
    heights = [d.height for d in deshields]
    found = None
    for s in shields:
        k = bisect_right(heights, s.height)
        n = len(heights) - k
        if n == 0:
            continue
        if n > 1 or found is not None:
            return None
        found = (s, deshields[k])
    return found


def find_exact_rtts(snap: Snapshot) -> list[RttMatch]:
    out = []
    for amount, shields in snap.iter_shieldings():
        deshields = snap.joinsplits_with_vpub_new(amount)
        if not deshields:
            continue
        pair = _unique_later_pair(shields, deshields)
        if pair is not None:
            out.append(RttMatch(pair[0], pair[1], amount, MatchKind.EXACT))
    return canonical_order(out)


# -- fee sums ------------------------------------------------------------------

@dataclass(frozen=True)
class FeeSum:
    total: int
    parts: tuple[int, ...]


@dataclass(frozen=True)
class FeeSumSet:
    base_fees: tuple[int, ...]
    k: int
    sums: tuple[FeeSum, ...]

    @property
    def totals(self) -> list[int]:
        return [s.total for s in self.sums]


def enumerate_fee_sums(base_fees: Sequence[int], k: int) -> FeeSumSet:
    """Fee adjustments made of exactly ``k`` common fees.

    For ``k == 2`` every multiset pair is summed and totals that are
    themselves a base fee are dropped (they are already covered by
    ``k == 1``).  Pairs are listed by descending total; when two pairs share
    a total the first by base-fee order is kept.
    """
    base = tuple(base_fees)
    if not base:
        raise ValueError("base_fees is empty")
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if len(set(base)) != len(base) or any(f <= 0 for f in base):
        raise ValueError("base fees must be distinct and positive")
    if k == 1:
        return FeeSumSet(base, 1, tuple(FeeSum(f, (f,)) for f in base))
    members = set(base)
    sums: dict[int, FeeSum] = {}
    for i, a in enumerate(base):
        for b in base[i:]:
            total = a + b
            if total not in members and total not in sums:
                sums[total] = FeeSum(total, (a, b))
    ordered = sorted(sums.values(), key=lambda s: -s.total)
    return FeeSumSet(base, 2, tuple(ordered))


# -- fee adjusted --------------------------------------------------------------

def consumed_refs(matches: Iterable[RttMatch]) -> set[tuple[str, int]]:
    refs = set()
    for m in matches:
        refs.add(m.shield.ref)
        refs.add(m.deshield.ref)
    return refs


def find_fee_adjusted_rtts(snap: Snapshot, fee_sums: FeeSumSet,
                           window_hours: float = DEFAULT_WINDOW_HOURS,
                           exclude: Iterable[RttMatch] = ()) -> list[RttMatch]:
    """Unique (shield ``a``, deshield ``a - f``) pairs within ``window_hours``.

    Joinsplits appearing in any match of ``exclude`` (normally the exact
    matches) cannot be candidates.  Pass ``exclude=()`` to disable that.
    """
    if window_hours <= 0:
        raise ValueError("window_hours must be positive")
    window = int(window_hours * 3600)
    kind = MatchKind.FEE1 if fee_sums.k == 1 else MatchKind.FEE2
    taken = consumed_refs(exclude)
    out = []
    for amount, shields in snap.iter_shieldings():
        if taken:
            shields = [s for s in shields if s.ref not in taken]
            if not shields:
                continue
        for fs in fee_sums.sums:
            target = amount - fs.total
            if target <= 0:
                continue
            deshields = snap.joinsplits_with_vpub_new(target)
            if not deshields:
                continue
            found = None
            count = 0
            for s in shields:
                for d in deshields:
                    if d.height <= s.height or d.time - s.time > window:
                        continue
                    if taken and d.ref in taken:
                        continue
                    count += 1
                    found = (s, d)
                    if count > 1:
                        break
                if count > 1:
                    break
            if count == 1:
                out.append(RttMatch(found[0], found[1], amount, kind, fs.total, fs.parts))
    return canonical_order(out)


# -- aggregation -----------------------------------------------------------------

def bucket_label(lo: int, hi: int | None) -> str:
    return f"[{lo}, {'∞' if hi is None else hi})"


def bucket_index(minutes: int) -> int:
    for i, (lo, hi) in enumerate(TIME_BUCKETS):
        if minutes >= lo and (hi is None or minutes < hi):
            return i
    raise ValueError(f"negative delta {minutes}")


@dataclass(frozen=True)
class BucketRow:
    label: str
    count: int
    coins: int


def bucket_by_time(matches: Iterable[RttMatch]) -> list[BucketRow]:
    counts = [0] * len(TIME_BUCKETS)
    coins = [0] * len(TIME_BUCKETS)
    for m in matches:
        i = bucket_index(m.delta_minutes)
        counts[i] += 1
        coins[i] += m.amount
    return [BucketRow(bucket_label(lo, hi), counts[i], coins[i])
            for i, (lo, hi) in enumerate(TIME_BUCKETS)]


@dataclass(frozen=True)
class TopNRow:
    n: int
    n_considered: int
    n_matched: int
    coins: int


def top_n_coverage(snap: Snapshot, matches: Iterable[RttMatch],
                   n_values: Sequence[int] = DEFAULT_TOP_N) -> list[TopNRow]:
    """For each N, how many of the N largest shieldings are the shield side
    of a match, and their summed amount.  N saturates at the number of
    shielding joinsplits."""
    if not n_values:
        raise ValueError("n_values is empty")
    matched = {m.shield.ref for m in matches}
    ranked = sorted(((amount, ref) for amount, refs in snap.iter_shieldings() for ref in refs),
                    key=lambda e: (-e[0], e[1].height, e[1].txid, e[1].js_index))
    rows = []
    for n in n_values:
        top = ranked[:n]
        hits = [a for a, ref in top if ref.ref in matched]
        rows.append(TopNRow(n, len(top), len(hits), sum(hits)))
    return rows


@dataclass(frozen=True)
class FeeTableRow:
    fee: int
    parts: tuple[int, ...]
    count: int
    coins: int


def fee_table(fee_sums: FeeSumSet, matches: Iterable[RttMatch]) -> list[FeeTableRow]:
    by_fee: dict[int, list[int]] = {fs.total: [0, 0] for fs in fee_sums.sums}
    for m in matches:
        if m.fee_adjustment in by_fee:
            by_fee[m.fee_adjustment][0] += 1
            by_fee[m.fee_adjustment][1] += m.amount
    return [FeeTableRow(fs.total, fs.parts, *by_fee[fs.total]) for fs in fee_sums.sums]


@dataclass(frozen=True)
class RttReport:
    matches: list[RttMatch]
    time_buckets: dict
    matched_coin_total: int
    exact_coin_total: int
    shielded_inflow_total: int
    top_n_tables: list[TopNRow]
    fee_tables: dict
    within_two_hours: int

    def count(self, kind: MatchKind) -> int:
        return sum(1 for m in self.matches if m.kind is kind)

    @property
    def matched_coin_share(self) -> Fraction:
        if not self.shielded_inflow_total:
            return Fraction(0)
        return Fraction(self.matched_coin_total, self.shielded_inflow_total)

    @property
    def exact_coin_share(self) -> Fraction:
        if not self.shielded_inflow_total:
            return Fraction(0)
        return Fraction(self.exact_coin_total, self.shielded_inflow_total)

    @property
    def within_two_hours_share(self) -> Fraction:
        n = self.count(MatchKind.EXACT)
        return Fraction(self.within_two_hours, n) if n else Fraction(0)


def build_report(snap: Snapshot, exact: Sequence[RttMatch],
                 fee_adjusted: Sequence[RttMatch] = (),
                 fee_sum_sets: Sequence[FeeSumSet] = (),
                 n_values: Sequence[int] = DEFAULT_TOP_N) -> RttReport:
    """Aggregate detection output.  Top-N coverage uses exact matches only."""
    matches = canonical_order([*exact, *fee_adjusted])
    inflow = sum(js.vpub_old for js, _, _ in snap.iter_joinsplits())
    buckets = {kind: bucket_by_time(m for m in matches if m.kind is kind)
               for kind in MatchKind}
    fee_tables = {}
    for fs in fee_sum_sets:
        kind = MatchKind.FEE1 if fs.k == 1 else MatchKind.FEE2
        fee_tables[kind] = fee_table(fs, (m for m in fee_adjusted if m.kind is kind))
    return RttReport(
        matches=matches,
        time_buckets=buckets,
        matched_coin_total=sum(m.amount for m in matches),
        exact_coin_total=sum(m.amount for m in exact),
        shielded_inflow_total=inflow,
        top_n_tables=top_n_coverage(snap, exact, n_values),
        fee_tables=fee_tables,
        within_two_hours=sum(1 for m in exact if m.delta_minutes < 120),
    )


def detect_all(snap: Snapshot, base_fees: Sequence[int] = DEFAULT_BASE_FEES,
               window_hours: float = DEFAULT_WINDOW_HOURS, exclude_exact: bool = True,
               n_values: Sequence[int] = DEFAULT_TOP_N) -> RttReport:
    """Exact pass, then 1-fee, then 2-fee, then aggregate.

    Each fee pass excludes joinsplits consumed by earlier passes (unless
    ``exclude_exact`` is False, in which case nothing is excluded).
    """
    exact = find_exact_rtts(snap)
    fee1_set = enumerate_fee_sums(base_fees, 1)
    fee2_set = enumerate_fee_sums(base_fees, 2)
    fee1 = find_fee_adjusted_rtts(snap, fee1_set, window_hours,
                                  exclude=exact if exclude_exact else ())
    fee2 = find_fee_adjusted_rtts(snap, fee2_set, window_hours,
                                  exclude=[*exact, *fee1] if exclude_exact else ())
    return build_report(snap, exact, [*fee1, *fee2], (fee1_set, fee2_set), n_values)
