"""Report bundle files: CSV tables, whitespace-separated plot data, a summary.

Every file opens with a ``# zlink <version>`` line followed by a header
row.  Output depends only on the snapshot and options, so re-running on
the same store gives byte-identical files.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .analytics import (EmptyChainError, block_participation, census, fee_histogram,
                        pool_series, render_percent)
from .model import JoinSplitKind, format_amount
from .rtt import (MatchKind, RttMatch, RttReport, TIME_BUCKETS, bucket_index, bucket_label)
from .store import Snapshot

ANALYTICS_FILES = ("census.csv", "participation_histogram.dat", "pool_series.dat",
                   "fee_table.csv")
RTT_FILES = ("rtt_matches.csv", "rtt_time_buckets.csv", "rtt_topn.csv",
             "fee1_table.csv", "fee2_table.csv")

MATCH_COLUMNS = ("kind", "shield_txid", "shield_js_index", "shield_height", "shield_time",
                 "deshield_txid", "deshield_js_index", "deshield_height", "deshield_time",
                 "amount", "deshield_amount", "fee", "fee_parts", "delta_blocks",
                 "delta_minutes", "time_bucket", "shield_tags", "deshield_tags")


def version_line() -> str:
    return f"# zlink {__version__}\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(version_line())
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _dat(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [version_line(), "# " + " ".join(header) + "\n"]
    lines.extend(" ".join(str(v) for v in row) + "\n" for row in rows)
    return "".join(lines)


def coins(zat: int, exact: bool) -> str:
    """Totals render whole coins unless ``exact``."""
    return format_amount(zat, whole=not exact)


# -- analytics -------------------------------------------------------------------

def census_csv(snap: Snapshot, exact: bool = False) -> str:
    c = census(snap)
    rows = [
        ("total_blocks", c.total_blocks),
        ("total_txs", c.total_txs),
        ("txs_with_joinsplit", c.txs_with_joinsplit),
        ("txs_with_joinsplit_pct", render_percent(c.txs_with_joinsplit_pct)),
        ("blocks_with_no_joinsplit_tx", c.blocks_with_no_joinsplit_tx),
        ("blocks_with_no_joinsplit_pct", render_percent(c.blocks_with_no_joinsplit_pct)),
        ("total_joinsplits", c.total_joinsplits),
    ]
    for kind in JoinSplitKind:
        rows.append((f"{kind.value}_joinsplits", c.kind_counts[kind]))
        rows.append((f"{kind.value}_pct", render_percent(c.kind_pct(kind))))
    rows += [
        ("joinsplits_with_shielding", c.with_shielding),
        ("joinsplits_with_deshielding", c.with_deshielding),
        ("total_shielded_inflow", coins(c.total_shielded_inflow, exact)),
        ("total_shielded_outflow", coins(c.total_shielded_outflow, exact)),
    ]
    return _csv(("metric", "value"), rows)


def participation_dat(snap: Snapshot) -> str:
    _, hist = block_participation(snap)
    return _dat(("pct_txs_with_joinsplit", "blocks"), enumerate(hist))


def pool_series_dat(snap: Snapshot) -> str:
    # plot data keeps full precision regardless of the table rounding option
    series = pool_series(snap)
    return _dat(("height", "shielded_pool", "total_supply"),
                ((p.height, format_amount(p.shielded_pool), format_amount(p.total_supply))
                 for p in series.points))


def fee_table_csv(snap: Snapshot, top: int | None = None) -> str:
    hist = fee_histogram(snap)
    return _csv(("fee", "tx_count", "pct"),
                ((format_amount(r.fee), r.count, render_percent(r.pct))
                 for r in hist.table(top)))


# -- round trips -------------------------------------------------------------------

def endpoint_tags(snap: Snapshot, m: RttMatch, tags: Mapping[bytes, str]
                  ) -> tuple[str, str]:
    """Labels of the transparent scripts feeding the shielding and receiving
    the deshielding."""
    if not tags:
        return "", ""
    shield_tx = snap.tx(m.shield.txid)
    funding = set()
    for prev in shield_tx.inputs:
        src = snap.tx(prev.txid)
        if src is not None and prev.vout < len(src.outputs):
            label = tags.get(src.outputs[prev.vout].script_id)
            if label:
                funding.add(label)
    deshield_tx = snap.tx(m.deshield.txid)
    receiving = {tags[o.script_id] for o in deshield_tx.outputs if o.script_id in tags}
    return ";".join(sorted(funding)), ";".join(sorted(receiving))


def rtt_matches_csv(snap: Snapshot, report: RttReport,
                    tags: Mapping[bytes, str] | None = None) -> str:
    rows = []
    for m in report.matches:
        lo, hi = TIME_BUCKETS[bucket_index(m.delta_minutes)]
        st, dt = endpoint_tags(snap, m, tags or {})
        rows.append((m.kind.value, m.shield.txid, m.shield.js_index, m.shield.height,
                     m.shield.time, m.deshield.txid, m.deshield.js_index, m.deshield.height,
                     m.deshield.time, format_amount(m.amount), format_amount(m.deshield_amount),
                     format_amount(m.fee_adjustment),
                     "+".join(format_amount(p) for p in m.fee_parts),
                     m.delta_blocks, m.delta_minutes, bucket_label(lo, hi), st, dt))
    return _csv(MATCH_COLUMNS, rows)


def time_buckets_csv(report: RttReport, exact: bool = False) -> str:
    rows = [(kind.value, r.label, r.count, coins(r.coins, exact))
            for kind in MatchKind for r in report.time_buckets[kind]]
    return _csv(("kind", "minutes", "count", "coins"), rows)


def topn_csv(report: RttReport, exact: bool = False) -> str:
    return _csv(("top_n", "considered", "matched", "coins"),
                ((r.n, r.n_considered, r.n_matched, coins(r.coins, exact))
                 for r in report.top_n_tables))


def fee_kind_csv(report: RttReport, kind: MatchKind, exact: bool = False) -> str:
    return _csv(("fee", "parts", "count", "coins"),
                ((format_amount(r.fee), "+".join(format_amount(p) for p in r.parts),
                  r.count, coins(r.coins, exact))
                 for r in report.fee_tables.get(kind, ())))


# -- summary -----------------------------------------------------------------------

def summary_md(snap: Snapshot, report: RttReport | None, exact: bool = False) -> str:
    out = [version_line(), "## Chain summary\n\n"]
    if snap.is_empty:
        out.append("Store is empty.\n")
        return "".join(out)
    c = census(snap)
    series = pool_series(snap)
    hist = fee_histogram(snap)
    first, last = snap.blocks()[0].height, snap.blocks()[-1].height
    out.append("| metric | value |\n|---|---|\n")
    rows = [
        ("heights", f"{first}..{last}"),
        ("blocks", c.total_blocks),
        ("transactions", c.total_txs),
        ("transactions with joinsplits",
         f"{c.txs_with_joinsplit} ({render_percent(c.txs_with_joinsplit_pct)}%)"),
        ("blocks with no joinsplit transaction",
         f"{c.blocks_with_no_joinsplit_tx} ({render_percent(c.blocks_with_no_joinsplit_pct)}%)"),
        ("joinsplits", c.total_joinsplits),
    ]
    for kind in JoinSplitKind:
        rows.append((f"{kind.value} joinsplits",
                     f"{c.kind_counts[kind]} ({render_percent(c.kind_pct(kind))}%)"))
    rows += [
        ("final shielded pool", coins(series.final_pool, exact)),
        ("final pool share of supply", f"{render_percent(series.final_share)}%"),
        ("mean per-block pool share", f"{render_percent(series.mean_share)}%"),
        ("top fees", ", ".join(format_amount(f) for f in hist.top_fees())),
        ("transactions with unknown fee", hist.total_fee_unknown),
    ]
    if report is not None:
        rows += [
            ("exact round trips", report.count(MatchKind.EXACT)),
            ("1-fee round trips", report.count(MatchKind.FEE1)),
            ("2-fee round trips", report.count(MatchKind.FEE2)),
            ("coins in matched round trips",
             f"{coins(report.matched_coin_total, exact)} of "
             f"{coins(report.shielded_inflow_total, exact)} "
             f"({render_percent(100 * report.matched_coin_share)}%)"),
            ("exact round trips within two hours",
             f"{report.within_two_hours} "
             f"({render_percent(100 * report.within_two_hours_share)}%)"),
        ]
    out.extend(f"| {k} | {v} |\n" for k, v in rows)
    return "".join(out)


# -- writing -------------------------------------------------------------------------

def _write(out_dir: Path, name: str, text: str) -> Path:
    path = out_dir / name
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def write_analytics(snap: Snapshot, out_dir: str | Path, report: RttReport | None = None,
                    exact: bool = False) -> list[Path]:
    if snap.is_empty:
        raise EmptyChainError("no blocks in store")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        _write(out_dir, "census.csv", census_csv(snap, exact)),
        _write(out_dir, "participation_histogram.dat", participation_dat(snap)),
        _write(out_dir, "pool_series.dat", pool_series_dat(snap)),
        _write(out_dir, "fee_table.csv", fee_table_csv(snap)),
        _write(out_dir, "summary.md", summary_md(snap, report, exact)),
    ]


def write_rtt(snap: Snapshot, report: RttReport, out_dir: str | Path, exact: bool = False,
              tags: Mapping[bytes, str] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        _write(out_dir, "rtt_matches.csv", rtt_matches_csv(snap, report, tags)),
        _write(out_dir, "rtt_time_buckets.csv", time_buckets_csv(report, exact)),
        _write(out_dir, "rtt_topn.csv", topn_csv(report, exact)),
        _write(out_dir, "fee1_table.csv", fee_kind_csv(report, MatchKind.FEE1, exact)),
        _write(out_dir, "fee2_table.csv", fee_kind_csv(report, MatchKind.FEE2, exact)),
        _write(out_dir, "summary.md", summary_md(snap, report, exact)),
    ]


def eval_csv(score) -> str:
    def frac(x):
        return "" if x is None else f"{float(x):.3f}"
    return _csv(("metric", "value"), [
        ("true_positives", score.true_positives),
        ("false_positives", score.false_positives),
        ("false_negatives", score.false_negatives),
        ("precision", frac(score.precision)),
        ("recall", frac(score.recall)),
        ("matched_coin_share_detected", frac(score.matched_coin_share_detected)),
        ("matched_coin_share_planted", frac(score.matched_coin_share_planted)),
    ])


def load_tags(path: str | Path) -> dict[bytes, str]:
    """Address tags: CSV of ``script_hex,label`` rows (``#`` lines skipped)."""
    tags = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(line for line in f if not line.startswith("#")):
            if not row or row[0] == "script_hex":
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: expected script_hex,label rows, got {row}")
            tags[bytes.fromhex(row[0])] = row[1]
    return tags
