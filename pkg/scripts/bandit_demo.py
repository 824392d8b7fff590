"""UCB policy selection on two Bernoulli arms, averaged over seeds.

Prints the share of pulls that went to the better arm in each window of 100.

    python scripts/bandit_demo.py --gap 0.2 --pulls 1000 --seeds 20
"""

from __future__ import annotations

import argparse
import random

from skillgraph.adapt import BanditState, bandit_select, bandit_update


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gap", type=float, default=0.2)
    ap.add_argument("--pulls", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--c", type=float, default=None, help="exploration constant (default: library default)")
    a = ap.parse_args()

    means = {"good": 0.5 + a.gap / 2, "poor": 0.5 - a.gap / 2}
    windows = [0.0] * (a.pulls // 100)
    for seed in range(a.seeds):
        rng = random.Random(seed)
        state = BanditState() if a.c is None else BanditState(c=a.c)
        state = state.with_arms("ctx", sorted(means))
        for i in range(a.pulls):
            arm = bandit_select(state, "ctx")
            state = bandit_update(state, "ctx", arm, float(rng.random() < means[arm]))
            if arm == "good" and i // 100 < len(windows):
                windows[i // 100] += 1 / (100 * a.seeds)
    for w, share in enumerate(windows):
        print(f"pulls {w * 100:>5}-{w * 100 + 99:<5} best-arm share {share:.3f}")


if __name__ == "__main__":
    main()
