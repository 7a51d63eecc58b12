"""Run (or reuse cached) directional experiments and print the measured tables.

    python3 scripts/run_acceptance.py [directional|ablations|statswap|all]
"""
import sys
import time

from padain_lab import acceptance as A
from padain_lab import experiments as X


def show_directional():
    r = A.directional(log=print)
    print("p      mean_acc  per_seed")
    for p, acc in r["accuracy"].items():
        print(f"{p:<6} {acc:.4f}    {[round(v, 4) for v in r['per_seed'][p]]}")
    print(f"best p {r['best_p']}  gain {100 * r['gain']:+.2f} points")
    print(f"uninformative confound: {r['uninformative']}  gap {100 * r['uninformative_gap']:+.2f} points")
    print(f"median epoch time {r['median_epoch_time']}  overhead {100 * r['overhead']:+.2f}%")


def show_ablations():
    for variant in ("backprop", "fixed-perm", "random-stats", "blocks"):
        seeds = (1,) if variant == "blocks" else A.SEEDS
        rows = A.ablation_rows(variant, seeds, log=print)
        print(f"-- {variant}")
        for s in X.summarize(rows):
            print(f"{s['label']:<22} n={s['n']} mean {s['mean']:.4f} std {s['std']:.4f}")


def show_statswap():
    r = A.statswap_trend(log=print)
    print(f"final mse {r['mse'][-1]:.5f}  stats delta max {r['stats_delta_max']:.2e}")
    print("mean distance to a per layer set {}, {0}..{0-4}:", [round(v, 4) for v in r["mean_dist_to_a"]])
    print("mean distance to b per layer set {}, {0}..{0-4}:", [round(v, 4) for v in r["mean_dist_to_b"]])
    print(f"fraction of pairs monotone: {r['pairs_monotone_to_a']:.2f}")


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    t0 = time.time()
    for name, fn in (("statswap", show_statswap), ("directional", show_directional), ("ablations", show_ablations)):
        if which in (name, "all"):
            print(f"== {name}")
            fn()
    print(f"total {time.time() - t0:.0f}s")
