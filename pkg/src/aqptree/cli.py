"""Command-line interface: stream replay, dataset/workload generation, and
CSV conversion."""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .archive import event_to_json, read_events, write_events
from .harness import (
    DptEngine,
    RsEngine,
    SrsEngine,
    domain_of,
    generate_dataset,
    generate_workload,
    report_json,
    run,
)
from .model import EngineConfig, Tuple


def _load_config(path, d, seed):
    if path:
        with open(path) as f:
            raw = json.load(f)
        raw.setdefault("d", d)
        raw.setdefault("seed", seed)
        return EngineConfig(**raw)
    return EngineConfig(d=d, k=16, m=256, seed=seed)


def _cmd_run(args):
    events = list(read_events(args.stream))
    d = 1
    for ev in events:
        if ev[0] == "insert":
            d = len(ev[1].coords)
            break
    config = _load_config(args.config, d, args.seed)
    n_data = sum(1 for ev in events if ev[0] != "query")
    init_after = args.init_after
    if 0 < init_after <= 1:
        init_after = int(init_after * n_data)
    init_after = int(init_after)

    engines = {}
    pool_budget = 2 * config.m
    for name in args.engines.split(","):
        name = name.strip()
        if name == "dpt":
            engines[name] = DptEngine(config)
        elif name == "dpt-frozen":
            engines[name] = DptEngine(config, repartition=False)
        elif name == "rs":
            engines[name] = RsEngine(config.d, pool_budget, config.seed)
        elif name == "srs":
            engines[name] = SrsEngine(config.d, pool_budget, config.k, config.seed)
        else:
            raise SystemExit(f"unknown engine {name!r}")

    reports = run(events, engines, init_after, timing=args.timing)
    payload = report_json(reports, include_errors=args.include_errors)
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload)
            f.write("\n")
    else:
        print(payload)
    if args.dump_plan:
        for name, eng in engines.items():
            if isinstance(eng, DptEngine) and eng.engine.plan is not None:
                with open(args.dump_plan, "w") as f:
                    f.write(eng.engine.plan.to_json(indent=2))
                    f.write("\n")
                break
    if args.status:
        for name, eng in engines.items():
            if isinstance(eng, DptEngine):
                print(f"[{name}] {json.dumps(eng.engine.status(), sort_keys=True)}", file=sys.stderr)


def _cmd_gen_data(args):
    events = generate_dataset(args.seed, args.profile, args.n, args.d, args.delete_frac)
    write_events(args.out, events)
    print(f"wrote {len(events)} events to {args.out}", file=sys.stderr)


def _cmd_gen_queries(args):
    events = list(read_events(args.stream))
    lo, hi = domain_of(events)
    queries = generate_workload(args.seed, lo, hi, args.n, len(lo))
    with open(args.out, "w") as f:
        if not args.queries_only:
            for ev in events:
                f.write(event_to_json(ev))
                f.write("\n")
        for q in queries:
            f.write(event_to_json(("query", q)))
            f.write("\n")
    print(f"wrote {args.n} queries to {args.out}", file=sys.stderr)


def _cmd_convert_csv(args):
    pred_cols = [c.strip() for c in args.pred_cols.split(",")]
    events = []
    with open(args.csv) as f:
        reader = csv.DictReader(f)
        for i, row in enumerate(reader):
            tid = int(row[args.id_col]) if args.id_col else i + 1
            coords = tuple(float(row[c]) for c in pred_cols)
            value = float(row[args.agg_col])
            events.append(("insert", Tuple(tid, coords, value)))
    write_events(args.out, events)
    print(f"converted {len(events)} rows to {args.out}", file=sys.stderr)


def main(argv=None):
    p = argparse.ArgumentParser(prog="aqptree")
    sub = p.add_subparsers(dest="cmd", required=True)

    pr = sub.add_parser("run", help="replay a stream into one or more engines")
    pr.add_argument("--stream", required=True)
    pr.add_argument("--config", default=None, help="JSON file of EngineConfig fields")
    pr.add_argument("--engines", default="dpt", help="comma list: dpt,dpt-frozen,rs,srs")
    pr.add_argument("--out", default=None)
    pr.add_argument("--init-after", type=float, default=0.1,
                    help="data events before engines initialize; <=1 means fraction")
    pr.add_argument("--timing", action="store_true", help="include latency/throughput (non-deterministic)")
    pr.add_argument("--include-errors", action="store_true")
    pr.add_argument("--dump-plan", default=None, help="write the DPT partition plan JSON here")
    pr.add_argument("--status", action="store_true", help="print engine status to stderr")
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(fn=_cmd_run)

    pg = sub.add_parser("gen-data", help="generate a synthetic stream")
    pg.add_argument("--profile", choices=["uniform", "skewed", "sorted"], default="uniform")
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--d", type=int, default=1)
    pg.add_argument("--seed", type=int, default=7)
    pg.add_argument("--delete-frac", type=float, default=0.0)
    pg.add_argument("--out", required=True)
    pg.set_defaults(fn=_cmd_gen_data)

    pq = sub.add_parser("gen-queries", help="append random queries to a stream")
    pq.add_argument("--stream", required=True)
    pq.add_argument("--n", type=int, default=2000)
    pq.add_argument("--seed", type=int, default=7)
    pq.add_argument("--queries-only", action="store_true")
    pq.add_argument("--out", required=True)
    pq.set_defaults(fn=_cmd_gen_queries)

    pc = sub.add_parser("convert-csv", help="convert a CSV file to a JSONL insert stream")
    pc.add_argument("--csv", required=True)
    pc.add_argument("--agg-col", required=True)
    pc.add_argument("--pred-cols", required=True)
    pc.add_argument("--id-col", default=None)
    pc.add_argument("--out", required=True)
    pc.set_defaults(fn=_cmd_convert_csv)

    args = p.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
