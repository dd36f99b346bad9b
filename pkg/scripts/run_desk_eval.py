"""Run all four desk-scale experiments from one config and print a short digest.

    python3 scripts/run_desk_eval.py --config configs/eval_desk.json --out results/desk
"""

import argparse
import time
from pathlib import Path

from netvec import eval as ev
from netvec.synth import WorldSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/eval_desk.json")
    ap.add_argument("--out", default="results/desk")
    args = ap.parse_args()

    cfg = ev.EvalConfig.from_json(args.config)
    t0 = time.perf_counter()
    exp = ev.Experiment.prepare(WorldSpec.from_config(cfg.world), cfg.queue_size, cfg.model, cfg.train_limit)
    print(f"world: {len(exp.world.users)} users, {len(exp.day1) + len(exp.day2)} requests; "
          f"trained {exp.model.stats.updates} updates in {time.perf_counter() - t0:.1f}s")
    print(f"persona purity of hostname embeddings: {ev.persona_purity(exp.model, exp.world):.3f}")

    for name in ev.EXPERIMENTS:
        t0 = time.perf_counter()
        rows = ev.run_experiment(name, cfg, args.out, exp)
        print(f"\n{name} ({time.perf_counter() - t0:.1f}s) -> {Path(args.out) / (name + '.csv')}")
        header = ev.CSV_HEADERS[name]
        for r in rows[:12]:
            print("  " + "  ".join(f"{h}={r[h]:.3f}" if isinstance(r[h], float) else f"{h}={r[h]}" for h in header))
        if len(rows) > 12:
            print(f"  ... {len(rows) - 12} more rows")


if __name__ == "__main__":
    main()
