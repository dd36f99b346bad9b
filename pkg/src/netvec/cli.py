"""Command line entry point: ``netvec {run,bench,synth,eval,inspect-model}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import eval as ev
from .embed import EmbeddingModel
from .pipeline import (ConfigError, PipelineConfig, bench_capture, synthetic_bench_traces, traces_from_pcap,
                       write_bench_csv)
from .synth import WorldSpec, default_world_spec, generate_trace, generate_world


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_run(args) -> int:
    from .pipeline import run

    overrides = _parse_set(args.set)
    if args.realtime:
        overrides["realtime"] = True
    if args.shards is not None:
        overrides["shards"] = args.shards
    cfg = PipelineConfig.from_json(args.config, overrides)
    metrics = run(cfg, args.out)
    totals = {k: v for k, v in sorted(metrics.totals.items()) if not k.startswith("loss_")}
    print(json.dumps({"totals": totals, "wall_seconds": round(metrics.wall_seconds, 3)}, indent=2))
    return 0


def cmd_bench(args) -> int:
    traces = traces_from_pcap(args.pcap) if args.pcap else synthetic_bench_traces(args.count)
    modes = ("discard", "parse") if args.mode == "both" else (args.mode,)
    rows = [r for m in modes for r in bench_capture(traces, m, repeat=args.repeat)]
    print(f"{'mode':8} {'size':>5} {'packets':>9} {'tuples':>9} {'Mp/s':>8} {'Gb/s':>8}")
    for r in rows:
        print(f"{r.mode:8} {r.size:5d} {r.packets:9d} {r.tuples:9d} {r.mpps:8.3f} {r.gbps:8.3f}")
    if args.out:
        write_bench_csv(args.out, rows)
    return 0


def _world_spec(path: str | None) -> WorldSpec:
    if path is None:
        return default_world_spec()
    d = json.loads(Path(path).read_text())
    if "source" in d:
        d = d["source"]["world"]
    elif "world" in d:
        d = d["world"]
    return WorldSpec.from_config(d)


def cmd_synth(args) -> int:
    world = generate_world(_world_spec(args.config))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    tuples = generate_trace(world, args.out, args.format)
    if args.categories:
        world.store.write(args.categories)
    print(f"wrote {len(tuples)} requests from {len(world.users)} users to {args.out}")
    return 0


def cmd_eval(args) -> int:
    d = json.loads(Path(args.config).read_text())
    cfg = ev.EvalConfig.from_dict(d.get("eval", d))
    names = ev.EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    exp = ev.Experiment.prepare(WorldSpec.from_config(cfg.world), cfg.queue_size, cfg.model, cfg.train_limit)
    for name in names:
        rows = ev.run_experiment(name, cfg, args.out, exp)
        print(f"{name}: {len(rows)} rows -> {Path(args.out) / (name + '.csv')}")
    return 0


def cmd_inspect(args) -> int:
    model = EmbeddingModel.load(args.model)
    i = model.token_id(args.hostname)
    if i is None:
        print(f"{args.hostname}: not in vocabulary", file=sys.stderr)
        return 1
    E = model.E_in.astype(np.float64)
    norms = np.linalg.norm(E, axis=1)
    q = E[i] / (norms[i] or 1.0)
    sims = np.divide(E @ q, norms, out=np.zeros(len(E)), where=norms > 0)
    sims[:2] = -np.inf
    sims[i] = -np.inf
    for j in np.argsort(-sims, kind="stable")[: args.k]:
        if np.isfinite(sims[j]):
            print(f"{sims[j]:+.4f}  {model.vocab.id_to_token[j]}  (count {model.vocab.counts[j]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netvec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--realtime", action="store_true", help="pace replay by trace timestamps")
    r.add_argument("--shards", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (dotted key)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="capture throughput: discard vs parse path")
    b.add_argument("--mode", choices=("discard", "parse", "both"), default="both")
    b.add_argument("--pcap", help="pcap file to replay from memory (default: synthetic traffic)")
    b.add_argument("--count", type=int, default=200_000, help="synthetic packets per size bucket")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--out", help="write results CSV here")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="generate a persona trace")
    s.add_argument("--config", help="JSON world spec (or pipeline/eval config holding one)")
    s.add_argument("--format", choices=("pcap", "tuple-csv"), default="tuple-csv")
    s.add_argument("--out", required=True)
    s.add_argument("--categories", help="also write the labeled-hostname TSV here")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="run a desk-scale experiment")
    e.add_argument("experiment", choices=(*ev.EXPERIMENTS, "all"))
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-model", help="nearest neighbours of a hostname")
    i.add_argument("model")
    i.add_argument("hostname")
    i.add_argument("-k", type=int, default=10)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
