"""Recall of planted exact links as planted amounts start to collide.

A collided plant shares its amount with a second shielding, so the
uniqueness rule should (correctly) refuse to link it.

    python3 scripts/collision_sweep.py --rates 0 0.1 0.25 0.5
"""

import argparse

from zlink.rtt import MatchKind, detect_all
from zlink.store import snapshot_of
from zlink.synth import RttBehavior, SynthConfig, generate, score


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", type=float, nargs="+", default=[0.0, 0.1, 0.25, 0.5])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--blocks", type=int, default=200)
    ap.add_argument("--plants", type=int, default=10)
    args = ap.parse_args()

    print("collision_rate,tp,fp,fn,precision,recall")
    for rate in args.rates:
        tp = fp = fn = 0
        for seed in range(1, args.seeds + 1):
            cfg = SynthConfig(seed=seed, n_blocks=args.blocks,
                              rtt_behavior=RttBehavior(planted_exact_count=args.plants,
                                                       collision_rate=rate))
            batch, truth = generate(cfg)
            rep = detect_all(snapshot_of(batch.blocks))
            s = score(rep.matches, truth, kinds=[MatchKind.EXACT])
            tp, fp, fn = tp + s.true_positives, fp + s.false_positives, fn + s.false_negatives
        prec = tp / (tp + fp) if tp + fp else float("nan")
        rec = tp / (tp + fn) if tp + fn else float("nan")
        print(f"{rate},{tp},{fp},{fn},{prec:.3f},{rec:.3f}")


if __name__ == "__main__":
    main()
