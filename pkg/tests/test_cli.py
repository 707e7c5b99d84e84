import csv
import hashlib
import json

import pytest

from zlink import cli
from zlink.cli import EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, main
from zlink.ingest import write_jsonl
from zlink.report import MATCH_COLUMNS
from zlink.store import Store
from zlink.synth import RttBehavior, SynthConfig, generate


def rows(path):
    with open(path, newline="") as f:
        lines = [l for l in f if not l.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture
def store(tmp_path, appendix_path):
    db = tmp_path / "s.db"
    assert main(["--store", str(db), "ingest", "--jsonl", str(appendix_path)]) == EXIT_OK
    return db


def test_ingest_summary_and_idempotence(tmp_path, appendix_path, capsys):
    db = str(tmp_path / "s.db")
    assert main(["--store", db, "ingest", "--jsonl", str(appendix_path)]) == 0
    assert "ingested 12 blocks, 23 txs, 12 joinsplits" in capsys.readouterr().out
    assert main(["--store", db, "ingest", "--jsonl", str(appendix_path)]) == 0
    assert "ingested 0 blocks" in capsys.readouterr().out


def test_ingest_gap_fails(tmp_path, appendix_path, capsys):
    lines = appendix_path.read_text().splitlines()
    gappy = tmp_path / "gap.jsonl"
    gappy.write_text("\n".join(lines[:3] + lines[5:]) + "\n")
    db = str(tmp_path / "s.db")
    assert main(["--store", db, "ingest", "--jsonl", str(gappy)]) == EXIT_INPUT
    assert "gap" in capsys.readouterr().err


def test_ingest_needs_one_source(tmp_path, appendix_path):
    db = str(tmp_path / "s.db")
    assert main(["--store", db, "ingest"]) == EXIT_INPUT
    assert main(["--store", db, "ingest", "--jsonl", str(appendix_path),
                 "--raw", str(appendix_path)]) == EXIT_INPUT


def test_ingest_locked_store(tmp_path, appendix_path, capsys):
    db = tmp_path / "s.db"
    with Store(db):
        assert main(["--store", str(db), "ingest", "--jsonl", str(appendix_path)]) == EXIT_INPUT
    assert "locked" in capsys.readouterr().err


def test_rtt_appendix(store, tmp_path):
    out = tmp_path / "rep"
    assert main(["--store", str(store), "rtt", "--out", str(out)]) == 0
    got = rows(out / "rtt_matches.csv")
    assert list(got[0]) == list(MATCH_COLUMNS)
    summary = sorted((r["kind"], r["shield_txid"][:8], r["deshield_txid"][:8], r["amount"],
                      r["fee"], r["fee_parts"], int(r["delta_minutes"]), r["time_bucket"])
                     for r in got)
    assert summary == sorted([
        ("exact", "a2c9f7ad", "ab3b717b", "3479.51898254", "0", "", 2, "[0, 5)"),
        ("exact", "d4e0047d", "b63f4948", "12.14981195", "0", "", 3, "[0, 5)"),
        ("exact", "a6c87c8e", "9f300ecf", "3.77326919", "0", "", 928, "[120, 1440)"),
        ("exact", "709e38ab", "9f300ecf", "220.01805591", "0", "", 15, "[15, 30)"),
        ("fee1", "2641aeec", "4d83b22a", "0.67209594", "0.0001", "0.0001", 8, "[5, 15)"),
        ("fee2", "84a11d97", "855e94b0", "6.3805", "0.0011", "0.0001+0.001", 35, "[30, 60)"),
    ])
    buckets = rows(out / "rtt_time_buckets.csv")
    assert [r["minutes"] for r in buckets if r["kind"] == "exact"] == [
        "[0, 5)", "[5, 15)", "[15, 30)", "[30, 60)", "[60, 120)", "[120, 1440)", "[1440, ∞)"]
    assert [int(r["count"]) for r in buckets if r["kind"] == "exact"] == [2, 0, 1, 0, 0, 1, 0]


def test_whole_and_exact_totals(store, tmp_path):
    main(["--store", str(store), "rtt", "--out", str(tmp_path / "a")])
    main(["--store", str(store), "rtt", "--out", str(tmp_path / "b"), "--exact"])
    whole = {r["minutes"]: r["coins"] for r in rows(tmp_path / "a" / "rtt_time_buckets.csv")
             if r["kind"] == "exact"}
    full = {r["minutes"]: r["coins"] for r in rows(tmp_path / "b" / "rtt_time_buckets.csv")
            if r["kind"] == "exact"}
    assert whole["[0, 5)"] == "3491" and full["[0, 5)"] == "3491.66879449"


def test_analyze_files(store, tmp_path):
    out = tmp_path / "rep"
    assert main(["--store", str(store), "analyze", "--out", str(out)]) == 0
    series = [l.split() for l in (out / "pool_series.dat").read_text().splitlines()
              if not l.startswith("#")]
    assert len(series) == 12 and all(len(r) == 3 for r in series)
    fees = rows(out / "fee_table.csv")
    counts = [int(r["tx_count"]) for r in fees]
    assert counts == sorted(counts, reverse=True)
    hist = (out / "participation_histogram.dat").read_text().splitlines()
    assert hist[0].startswith("# zlink ") and len(hist) == 2 + 101
    assert "exact round trips | 4" in (out / "summary.md").read_text()


def test_every_file_has_version_and_header(store, tmp_path):
    out = tmp_path / "rep"
    main(["--store", str(store), "analyze", "--out", str(out)])
    main(["--store", str(store), "rtt", "--out", str(out)])
    for path in out.iterdir():
        first, second = path.read_text().splitlines()[:2]
        assert first == f"# zlink {cli.__version__}", path.name
        assert second.strip(), path.name


def test_bundle_deterministic(tmp_path, appendix_path):
    digests = []
    for run in ("one", "two"):
        db = str(tmp_path / f"{run}.db")
        out = tmp_path / run
        main(["--store", db, "ingest", "--jsonl", str(appendix_path)])
        main(["--store", db, "analyze", "--out", str(out)])
        main(["--store", db, "rtt", "--out", str(out)])
        digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted(out.iterdir())})
    assert digests[0] == digests[1] and len(digests[0]) == 10


def test_empty_store(tmp_path, capsys):
    db = tmp_path / "s.db"
    Store(db).close()
    out = tmp_path / "rep"
    assert main(["--store", str(db), "rtt", "--out", str(out)]) == EXIT_OK
    assert rows(out / "rtt_matches.csv") == []
    assert main(["--store", str(db), "analyze", "--out", str(out)]) == EXIT_INPUT
    assert "empty" in capsys.readouterr().err


def test_synth_eval_round(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--seed", "42", "--out", str(out1), "--raw"]) == 0
    assert main(["synth", "--seed", "42", "--out", str(out2), "--raw"]) == 0
    for name in ("chain.jsonl", "truth.jsonl", "chain.raw"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    db = str(tmp_path / "s.db")
    assert main(["--store", db, "ingest", "--raw", str(out1 / "chain.raw")]) == 0
    capsys.readouterr()
    assert main(["--store", db, "eval", "--truth", str(out1 / "truth.jsonl"),
                 "--out", str(tmp_path / "ev")]) == 0
    assert "precision=1.000 recall=1.000" in capsys.readouterr().out
    assert rows(tmp_path / "ev" / "eval.csv")[3] == {"metric": "precision", "value": "1.000"}


def test_eval_collision_chain(tmp_path, capsys):
    cfg = {"synth": {"n_blocks": 150,
                     "rtt_behavior": {"planted_exact_count": 6, "collision_rate": 0.5}}}
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps(cfg))
    out = tmp_path / "syn"
    assert main(["--config", str(conf), "synth", "--seed", "3", "--out", str(out)]) == 0
    db = str(tmp_path / "s.db")
    main(["--store", db, "ingest", "--jsonl", str(out / "chain.jsonl")])
    main(["--store", db, "rtt", "--out", str(tmp_path / "rep")])
    capsys.readouterr()
    assert main(["--store", db, "eval", "--truth", str(out / "truth.jsonl"),
                 "--detected", str(tmp_path / "rep" / "rtt_matches.csv"),
                 "--out", str(tmp_path / "ev")]) == EXIT_OK
    line = capsys.readouterr().out
    recall = float(line.split("recall=")[1])
    assert recall < 1


def test_eval_wrong_chain(tmp_path, store, capsys):
    out = tmp_path / "syn"
    main(["synth", "--seed", "1", "--blocks", "20", "--out", str(out)])
    assert main(["--store", str(store), "eval", "--truth", str(out / "truth.jsonl"),
                 "--out", str(tmp_path)]) == EXIT_INPUT
    assert "chain" in capsys.readouterr().err


def test_infeasible_synth(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"synth": {"fraction_tx_with_joinsplit": 3}}))
    assert main(["--config", str(conf), "synth", "--out", str(tmp_path)]) == EXIT_INPUT


def test_precedence(tmp_path, monkeypatch):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"store_path": "from_file.db", "window_hours": 6,
                                "rpc_user": "fileuser"}))
    parser = cli.build_parser()

    def resolve(argv, env):
        return cli.resolve_config(parser.parse_args(argv), env)

    cfg = resolve(["--config", str(conf), "rtt"], {})
    assert (cfg.store_path, cfg.window_hours, cfg.rpc_user) == ("from_file.db", 6, "fileuser")
    cfg = resolve(["--config", str(conf), "rtt"], {"ZLINK_STORE": "env.db",
                                                   "ZLINK_RPC_USER": "envuser"})
    assert (cfg.store_path, cfg.rpc_user) == ("env.db", "envuser")
    cfg = resolve(["--config", str(conf), "--store", "flag.db", "rtt", "--window-hours", "2"],
                  {"ZLINK_STORE": "env.db"})
    assert (cfg.store_path, cfg.window_hours) == ("flag.db", 2)
    assert resolve(["rtt"], {}).store_path == "zlink.db"
    with pytest.raises(SystemExit):
        parser.parse_args(["ingest", "--rpc-user", "x"])


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"nope": 1}))
    assert main(["--config", str(conf), "rtt"]) == EXIT_INPUT


def test_internal_error_code(store, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("bug")
    monkeypatch.setattr(cli, "detect_all", boom)
    assert main(["--store", str(store), "rtt", "--out", "unused"]) == EXIT_INTERNAL


def test_base_fee_override(store, tmp_path):
    out = tmp_path / "rep"
    main(["--store", str(store), "rtt", "--out", str(out), "--base-fees", "0.0001"])
    kinds = [r["kind"] for r in rows(out / "rtt_matches.csv")]
    assert kinds.count("fee1") == 1 and kinds.count("fee2") == 0
    assert [r["fee"] for r in rows(out / "fee1_table.csv")] == ["0.0001"]


def test_address_tags(tmp_path):
    cfg = SynthConfig(seed=8, n_blocks=60, rtt_behavior=RttBehavior(planted_exact_count=2))
    batch, truth = generate(cfg)
    link = truth.planted_links[0]
    deshield = next(tx for b in batch.blocks for tx in b.txs if tx.txid == link.deshield[0])
    tags = tmp_path / "tags.csv"
    tags.write_text("script_hex,label\n" + deshield.outputs[0].script_id.hex() + ",pool-A\n")
    chain = tmp_path / "c.jsonl"
    with open(chain, "w") as f:
        write_jsonl(batch.blocks, f)
    db = str(tmp_path / "s.db")
    main(["--store", db, "ingest", "--jsonl", str(chain)])
    main(["--store", db, "rtt", "--out", str(tmp_path / "rep"), "--tags", str(tags)])
    got = {r["deshield_txid"]: r["deshield_tags"] for r in rows(tmp_path / "rep" /
                                                                "rtt_matches.csv")}
    assert got[link.deshield[0]] == "pool-A"
    assert sum(1 for v in got.values() if v) == 1


def test_verify(store, capsys):
    assert main(["--store", str(store), "verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "oracle agrees" in out and "0 problems" in out


def test_rpc_ingest_resumes(tmp_path, small_chain, capsys):
    from zlink.ingest.playback import PlaybackNode, record_fixture
    blocks = small_chain[0].blocks[:20]
    db = str(tmp_path / "s.db")
    with PlaybackNode(record_fixture(blocks)) as node:
        assert main(["--store", db, "ingest", "--rpc", node.url, "--to", "9"]) == 0
        assert main(["--store", db, "ingest", "--rpc", node.url]) == 0
        assert main(["--store", db, "ingest", "--rpc", node.url, "--to", "30"]) == EXIT_INPUT
    out = capsys.readouterr().out
    assert "ingested 10 blocks" in out and "tip 19 (was 9)" in out
    with Store(db, writable=False) as s:
        assert s.snapshot().blocks() == list(blocks)
