"""Profiler throughput over time on a heavy-tailed trace, model vs baseline.

Per-user request rates are lognormal, so a few users accumulate very long
histories; the baseline recounts them on every request while the model
profiler only looks at the current window.

    python3 scripts/heavy_tail_throughput.py --sigma 1.5 --rate 135 --buckets 10
"""

import argparse
import time

from netvec import eval as ev
from netvec.pipeline import ModelConfig
from netvec.synth import default_world_spec, generate_world


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rate", type=float, default=135.0, help="mean requests per user-hour")
    ap.add_argument("--sigma", type=float, default=1.5, help="lognormal spread of per-user rates")
    ap.add_argument("--buckets", type=int, default=10)
    ap.add_argument("--train-limit", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out")
    args = ap.parse_args()

    t0 = time.perf_counter()
    world = generate_world(default_world_spec(request_rate=args.rate, user_rate_sigma=args.sigma, seed=args.seed))
    exp = ev.Experiment.prepare(world, 16, ModelConfig(seed=1), train_limit=args.train_limit)
    print(f"{len(exp.day1) + len(exp.day2)} requests, prepared in {time.perf_counter() - t0:.1f}s")
    rows = ev.eval_throughput_vs_baseline(exp, args.buckets)
    for r in rows:
        print(f"bucket {r['bucket']:2d}  model {r['tuples_per_sec_model']:9.0f}/s  "
              f"baseline {r['tuples_per_sec_baseline']:9.0f}/s")
    cv = ev.coefficient_of_variation([r["tuples_per_sec_model"] for r in rows])
    print(f"model CV {cv:.3f}; baseline first/last {rows[0]['tuples_per_sec_baseline'] / rows[-1]['tuples_per_sec_baseline']:.2f}x")
    if args.out:
        ev.write_csv(args.out, "throughput", rows)


if __name__ == "__main__":
    main()
