"""Command-line entry point.

Settings resolve as flags > environment > JSON config file > defaults.
RPC credentials are read from the environment or the config file only.

Exit codes: 0 success, 2 bad input (unreadable or invalid data, empty or
locked store, infeasible config), 70 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import random
import sys
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .analytics import EmptyChainError, fee_histogram
from .ingest import RpcClient, RpcError, read_jsonl, read_raw, write_jsonl
from .ingest.raw import write_raw
from .model import parse_amount
from .report import eval_csv, load_tags, write_analytics, write_rtt
from .rtt import DEFAULT_BASE_FEES, DEFAULT_TOP_N, DEFAULT_WINDOW_HOURS, MatchKind, detect_all
from .store import ChainIndex, Store, StoreError, snapshot_of
from .synth import (GroundTruth, OracleSizeError, SynthConfig, generate,
                    oracle_exact_rtts, score)

log = logging.getLogger("zlink")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 70

ENV_VARS = {
    "store_path": "ZLINK_STORE",
    "rpc_url": "ZLINK_RPC_URL",
    "rpc_user": "ZLINK_RPC_USER",
    "rpc_password": "ZLINK_RPC_PASSWORD",
}
SECRET_KEYS = ("rpc_user", "rpc_password")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    store_path: str = "zlink.db"
    raw_path: str | None = None
    jsonl_path: str | None = None
    rpc_url: str | None = None
    rpc_user: str | None = None
    rpc_password: str | None = None
    from_height: int | None = None
    to_height: int | None = None
    workers: int = 4
    base_fees: tuple | None = None
    fees_from_chain: bool = False
    window_hours: float = DEFAULT_WINDOW_HOURS
    top_n: tuple = DEFAULT_TOP_N
    out_dir: str = "report"
    exact: bool = False
    tags_path: str | None = None
    synth: dict = field(default_factory=dict)

    @property
    def sources(self) -> list[str]:
        return [k for k in ("raw_path", "jsonl_path", "rpc_url") if getattr(self, k)]


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _csv_amounts(text: str) -> tuple[int, ...]:
    return tuple(parse_amount(x.strip()) for x in text.split(",") if x.strip())


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"config file {args.config}: {e}") from None
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"config file has unknown keys: {sorted(unknown)}")
        for key, value in data.items():
            if key == "base_fees" and value is not None:
                value = tuple(parse_amount(str(v)) for v in value)
            elif key == "top_n":
                value = tuple(int(v) for v in value)
            setattr(cfg, key, value)
    for key, var in ENV_VARS.items():
        if environ.get(var):
            setattr(cfg, key, environ[var])
    for key, value in vars(args).items():
        if key in names and key not in SECRET_KEYS and value is not None:
            setattr(cfg, key, value)
    return cfg


# -- commands ------------------------------------------------------------------------

def _open_store(cfg: RunConfig, writable: bool) -> Store:
    return Store(cfg.store_path, writable=writable)


def _in_range(blocks, cfg: RunConfig):
    lo = cfg.from_height if cfg.from_height is not None else -1
    hi = cfg.to_height if cfg.to_height is not None else float("inf")
    return [b for b in blocks if lo <= b.height <= hi]


def cmd_ingest(cfg: RunConfig) -> int:
    if len(cfg.sources) != 1:
        raise UsageError("ingest needs exactly one of --raw, --jsonl, --rpc")
    with _open_store(cfg, writable=True) as store:
        start_tip = store.tip_height
        counts = [0, 0, 0]

        def commit(blocks):
            new = [b for b in blocks if b.height > store.tip_height]
            store.append_blocks(new)
            counts[0] += len(new)
            counts[1] += sum(len(b.txs) for b in new)
            counts[2] += sum(len(tx.joinsplits) for b in new for tx in b.txs)

        if cfg.raw_path:
            with open(cfg.raw_path, "rb") as f:
                commit(_in_range(read_raw(f, workers=cfg.workers).blocks, cfg))
        elif cfg.jsonl_path:
            with open(cfg.jsonl_path, encoding="utf-8") as f:
                commit(_in_range(read_jsonl(f).blocks, cfg))
        else:
            client = RpcClient(cfg.rpc_url, cfg.rpc_user, cfg.rpc_password)
            lo = cfg.from_height if cfg.from_height is not None else store.tip_height + 1
            hi = cfg.to_height if cfg.to_height is not None else client.tip_height()
            from .ingest.rpc import iter_range
            chunk = []
            if hi >= lo:
                for block in iter_range(client, lo, hi, cfg.workers):
                    chunk.append(block)
                    if len(chunk) >= 256:  # commit as we go so a restart resumes
                        commit(chunk)
                        chunk = []
            commit(chunk)
        print(f"ingested {counts[0]} blocks, {counts[1]} txs, {counts[2]} joinsplits; "
              f"tip {store.tip_height} (was {start_tip})")
    return EXIT_OK


def _base_fees(cfg: RunConfig, snap) -> tuple[int, ...]:
    if cfg.base_fees:
        return tuple(cfg.base_fees)
    if cfg.fees_from_chain:
        return tuple(fee_histogram(snap).top_fees(5))
    return DEFAULT_BASE_FEES


def _detect(cfg: RunConfig, snap):
    return detect_all(snap, _base_fees(cfg, snap), cfg.window_hours, n_values=cfg.top_n)


def cmd_analyze(cfg: RunConfig) -> int:
    with _open_store(cfg, writable=False) as store:
        snap = store.snapshot()
        if snap.is_empty:
            raise EmptyChainError(f"store {cfg.store_path} is empty")
        paths = write_analytics(snap, cfg.out_dir, _detect(cfg, snap), cfg.exact)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_rtt(cfg: RunConfig) -> int:
    with _open_store(cfg, writable=False) as store:
        snap = store.snapshot()
        report = _detect(cfg, snap)
        tags = load_tags(cfg.tags_path) if cfg.tags_path else None
        paths = write_rtt(snap, report, cfg.out_dir, cfg.exact, tags)
    print(f"{report.count(MatchKind.EXACT)} exact, {report.count(MatchKind.FEE1)} 1-fee, "
          f"{report.count(MatchKind.FEE2)} 2-fee round trips")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = dict(cfg.synth)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.blocks is not None:
        params["n_blocks"] = args.blocks
    scfg = SynthConfig.from_dict(params)
    batch, truth = generate(scfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "chain.jsonl", "w", encoding="utf-8", newline="\n") as f:
        write_jsonl(batch.blocks, f)
    with open(out / "truth.jsonl", "w", encoding="utf-8", newline="\n") as f:
        truth.dump(f)
    if args.raw:
        with open(out / "chain.raw", "wb") as f:
            write_raw(batch.blocks, f)
    print(f"{len(batch.blocks)} blocks, {len(truth.planted_links)} planted links, "
          f"chain {truth.chain_id}")
    return EXIT_OK


def read_matches_csv(path: str) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = csv.DictReader(line for line in f if not line.startswith("#"))
        return [((r["shield_txid"], int(r["shield_js_index"])),
                 (r["deshield_txid"], int(r["deshield_js_index"])),
                 parse_amount(r["amount"])) for r in rows]


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    with open(args.truth, encoding="utf-8") as f:
        truth = GroundTruth.load(f)
    chain_id = None
    if args.detected:
        detected = read_matches_csv(args.detected)
        if Path(cfg.store_path).exists():
            with _open_store(cfg, writable=False) as store:
                chain_id = store.snapshot().chain_id
    else:
        with _open_store(cfg, writable=False) as store:
            snap = store.snapshot()
            chain_id = snap.chain_id
            detected = _detect(cfg, snap).matches
    result = score(detected, truth, chain_id=chain_id)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(eval_csv(result), encoding="utf-8", newline="\n")

    def fmt(x):
        return "n/a" if x is None else f"{float(x):.3f}"
    print(f"tp={result.true_positives} fp={result.false_positives} "
          f"fn={result.false_negatives} precision={fmt(result.precision)} "
          f"recall={fmt(result.recall)}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Store self-checks plus an oracle spot-check on a sampled block range."""
    problems = []
    with _open_store(cfg, writable=False) as store:
        snap = store.snapshot()
        blocks = snap.blocks()
        fresh = ChainIndex()
        for b in blocks:
            fresh.add_block(b)
        if fresh.shield != store.index.shield or fresh.deshield != store.index.deshield:
            problems.append("amount index differs from a rebuild")
        for b in blocks:
            if not b.txs or not b.txs[0].is_coinbase:
                problems.append(f"block {b.height} lacks a leading coinbase")
        for prev, cur in zip(blocks, blocks[1:]):
            if cur.height != prev.height + 1:
                problems.append(f"height gap after {prev.height}")
        hist = fee_histogram(snap)
        negative = sum(n for fee, n in hist.counts.items() if fee < 0)
        if negative:
            problems.append(f"{negative} transactions with negative fee")
        if blocks:
            rng = random.Random(args.seed)
            n = min(args.sample_blocks, len(blocks))
            start = rng.randrange(0, len(blocks) - n + 1)
            window = blocks[start:start + n]
            sub = snapshot_of(window)
            try:
                want = oracle_exact_rtts(window)
            except OracleSizeError as e:
                problems.append(f"oracle spot-check skipped: {e}")
            else:
                from .rtt import find_exact_rtts
                if find_exact_rtts(sub) != want:
                    problems.append(f"indexed detector disagrees with oracle on heights "
                                    f"{window[0].height}..{window[-1].height}")
                else:
                    print(f"oracle agrees on heights {window[0].height}..{window[-1].height} "
                          f"({len(want)} matches)")
    for p in problems:
        print(f"FAIL {p}")
    print(f"{len(blocks)} blocks checked, {len(problems)} problems")
    return EXIT_OK if not problems else EXIT_INPUT


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zlink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"zlink {__version__}")
    p.add_argument("--store", dest="store_path", help="store file (env ZLINK_STORE)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="append blocks to the store")
    ing.add_argument("--raw", dest="raw_path")
    ing.add_argument("--jsonl", dest="jsonl_path")
    ing.add_argument("--rpc", dest="rpc_url", help="node URL (env ZLINK_RPC_URL)")
    ing.add_argument("--from", dest="from_height", type=int)
    ing.add_argument("--to", dest="to_height", type=int)
    ing.add_argument("--workers", type=int)

    def report_opts(sp):
        sp.add_argument("--out", dest="out_dir")
        sp.add_argument("--exact", action="store_const", const=True,
                        help="full-precision coin totals instead of whole coins")
        sp.add_argument("--base-fees", type=_csv_amounts,
                        help="comma-separated coin amounts")
        sp.add_argument("--fees-from-chain", action="store_const", const=True,
                        help="use the chain's own five most common fees")
        sp.add_argument("--window-hours", type=float)
        sp.add_argument("--top-n", type=_csv_ints)

    report_opts(sub.add_parser("analyze", help="census, participation, pool, fee files"))
    rtt = sub.add_parser("rtt", help="round-trip detection files")
    report_opts(rtt)
    rtt.add_argument("--tags", dest="tags_path", help="CSV of script_hex,label")

    syn = sub.add_parser("synth", help="generate a synthetic chain and ground truth")
    syn.add_argument("--seed", type=int)
    syn.add_argument("--blocks", type=int)
    syn.add_argument("--out", dest="out_dir")
    syn.add_argument("--raw", action="store_true", help="also write chain.raw")

    ev = sub.add_parser("eval", help="score detections against ground truth")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--detected", help="rtt_matches.csv; default runs detection on the store")
    report_opts(ev)

    ver = sub.add_parser("verify", help="store self-checks and oracle spot-check")
    ver.add_argument("--sample-blocks", type=int, default=50)
    ver.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "rtt":
            return cmd_rtt(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        return cmd_verify(cfg, args)
    except (ValueError, OSError, StoreError, RpcError) as e:
        # ChainDataError, EmptyChainError, InfeasibleConfig and friends are ValueErrors
        print(f"zlink: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
