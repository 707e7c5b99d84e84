"""Time indexed exact-match detection on a large synthetic chain.

    python3 scripts/bench_exact.py --joinsplits 1000000
"""

import argparse
import time

from zlink.rtt import find_exact_rtts
from zlink.store import Store
from zlink.synth import bulk_chain, oracle_exact_rtts


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--joinsplits", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--oracle-sample", type=int, default=2000,
                    help="size of the small chain timed to project oracle cost")
    args = ap.parse_args()

    t = time.perf_counter()
    blocks = bulk_chain(args.joinsplits, seed=args.seed)
    print(f"built {len(blocks)} blocks in {time.perf_counter() - t:.1f} s")

    t = time.perf_counter()
    store = Store()
    store.append_blocks(blocks)
    snap = store.snapshot()
    print(f"indexed {store.index.n_joinsplits} joinsplits in {time.perf_counter() - t:.1f} s")

    t = time.perf_counter()
    matches = find_exact_rtts(snap)
    print(f"exact detection: {len(matches)} matches in {time.perf_counter() - t:.2f} s")

    small = bulk_chain(args.oracle_sample, seed=args.seed)
    t = time.perf_counter()
    oracle_exact_rtts(small)
    per_pair = (time.perf_counter() - t) / args.oracle_sample ** 2
    hours = per_pair * args.joinsplits ** 2 / 3600
    print(f"nested-loop oracle: {per_pair * 1e9:.0f} ns per pair, projected {hours:.1f} h")


if __name__ == "__main__":
    main()
