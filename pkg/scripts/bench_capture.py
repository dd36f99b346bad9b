"""Discard vs parse throughput per packet-size bucket, on synthetic traffic or a pcap.

    python3 scripts/bench_capture.py --count 500000 --out results/bench.csv
"""

import argparse

from netvec.pipeline import bench_capture, synthetic_bench_traces, traces_from_pcap, write_bench_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pcap")
    ap.add_argument("--count", type=int, default=500_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--out")
    args = ap.parse_args()

    traces = traces_from_pcap(args.pcap) if args.pcap else synthetic_bench_traces(args.count)
    discard = bench_capture(traces, "discard", repeat=args.repeat)
    parse = bench_capture(traces, "parse", repeat=args.repeat)
    print(f"{'size':>5} {'discard Mp/s':>13} {'parse Mp/s':>11} {'discard Gb/s':>13} {'ratio':>6}")
    for d, p in zip(discard, parse):
        print(f"{d.size:5d} {d.mpps:13.3f} {p.mpps:11.3f} {d.gbps:13.3f} {p.mpps / d.mpps:6.2f}")
    if args.out:
        write_bench_csv(args.out, discard + parse)


if __name__ == "__main__":
    main()
