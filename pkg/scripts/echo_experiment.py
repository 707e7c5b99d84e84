"""Generate chains with target block and pool shapes and measure them back.

    python3 scripts/echo_experiment.py --blocks 2000 --seeds 1 2 3
"""

import argparse
import time

from zlink.analytics import census, pool_series
from zlink.store import snapshot_of
from zlink.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=2000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--js-free", type=float, default=0.40)
    ap.add_argument("--pool-share", type=float, default=0.035)
    args = ap.parse_args()

    print("seed,js_free_pct,mean_pool_share_pct,seconds")
    for seed in args.seeds:
        t = time.perf_counter()
        cfg = SynthConfig(seed=seed, n_blocks=args.blocks,
                          joinsplit_free_block_fraction=args.js_free,
                          target_pool_share=args.pool_share, fraction_tx_with_joinsplit=0.2)
        batch, _ = generate(cfg)
        snap = snapshot_of(batch.blocks)
        free = float(census(snap).blocks_with_no_joinsplit_pct)
        share = float(pool_series(snap).mean_share)
        print(f"{seed},{free:.2f},{share:.3f},{time.perf_counter() - t:.1f}")


if __name__ == "__main__":
    main()
