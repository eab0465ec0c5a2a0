"""Command-line entry point.

Subcommands: share, bench, train, predict, analyze, serve. Output is one
JSON object per line unless ``--csv`` is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench as bench_mod
from . import datasets, mlp, secanalysis, sharing
from .errors import ConfigurationError, RssError
from .runtime import Cluster, NetProfile, SoloCluster
from .tensor import RandomRange

JOBS = ("bench", "train", "predict")
PRESETS = ("reference", "table4")


# -- helpers ------------------------------------------------------------------------

def parse_peers(text: str) -> list[tuple[str, int]]:
    addrs = []
    for item in text.split(","):
        host, _, port = item.strip().rpartition(":")
        if not host or not port.isdigit():
            raise ConfigurationError(f"bad peer address {item!r}, expected host:port")
        addrs.append((host, int(port)))
    if len(addrs) != 3:
        raise ConfigurationError(f"--peers needs the three parties' addresses in party order, got {len(addrs)}")
    return addrs


def load_config(path: Optional[str]) -> dict:
    if not path or path in PRESETS:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def session_seeds(seed: Optional[int]) -> Optional[list[int]]:
    """Per-party PRG seeds; ``None`` asks for fresh OS randomness."""
    if seed is None:
        return None
    return [int(s) for s in np.random.default_rng([seed, 7]).integers(0, 2 ** 63, size=3)]


def profile_of(args) -> NetProfile:
    return NetProfile(rtt_ms=args.rtt_ms, bandwidth_bps=args.bandwidth_bps)


def open_session(args):
    rng_range = RandomRange.parse(args.rand_range) if args.rand_range else sharing.DEFAULT_RANGE
    seeds = session_seeds(args.seed)
    if args.mode == "socket":
        if args.party is None or not args.peers:
            raise ConfigurationError("socket mode needs --party and --peers")
        own = None if seeds is None else seeds[args.party]
        return SoloCluster.socket(args.party, parse_peers(args.peers), own, rng_range, profile_of(args),
                                  args.timeout)
    if getattr(args, "transport", "inprocess") == "loopback":
        return Cluster.loopback(seeds, rng_range, profile_of(args), args.timeout)
    return Cluster.inprocess(seeds, rng_range, profile_of(args), args.timeout)


def emit(records: Sequence[dict], as_csv: bool, out=None) -> None:
    out = out or sys.stdout
    if as_csv:
        if not records:
            return
        w = csv.DictWriter(out, fieldnames=list(records[0]), lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r)
    else:
        for r in records:
            out.write(json.dumps(r) + "\n")
    out.flush()


def data_seed(args) -> int:
    return 0 if args.seed is None else args.seed


# -- commands -----------------------------------------------------------------------

def cmd_share(args) -> int:
    block = datasets.read_block(args.input)
    values = datasets.standardize(block.values) if args.standardize else block.values
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with Cluster.inprocess(session_seeds(args.seed)) as cl:
        feats = cl.share(values, owner=args.owner)
        for p in range(3):
            path = out / f"P{p}.prss"
            sharing.write_share_file(path, feats.parts[p])
            records.append({"party": p, "path": str(path), "rows": values.shape[0], "cols": values.shape[1]})
        if block.labels is not None:
            lab = cl.share(datasets.one_hot(block.labels), owner=args.owner)
            for p in range(3):
                path = out / f"labels_P{p}.prss"
                sharing.write_share_file(path, lab.parts[p])
                records.append({"party": p, "path": str(path), "rows": lab.shape[0], "cols": lab.shape[1]})
    (out / "columns.json").write_text(json.dumps(block.columns))
    emit(records, args.csv)
    return 0


def bench_spec(args) -> list[bench_mod.BenchSpec]:
    cfg = load_config(args.config)
    protos = args.protocol or cfg.get("protocol", "all")
    protos = list(bench_mod.PROTOCOLS) if protos == "all" else [p.strip() for p in protos.split(",")]
    sizes = [int(n) for n in args.sizes.split(",")] if args.sizes else cfg.get("sizes", [10, 20, 30, 40, 50])
    reps = args.repetitions or cfg.get("repetitions", 10)
    span = args.span if args.span is not None else cfg.get("exponent_span", 0)
    return [bench_mod.BenchSpec(p, sizes, reps, span) for p in protos]


def cmd_bench(args) -> int:
    specs = bench_spec(args)
    rows = []
    with open_session(args) as sess:
        for spec in specs:
            rows += bench_mod.bench(spec, data_seed(args), session=sess)
    emit([r.as_dict() for r in rows], args.csv)
    return 0 if all(r.finite for r in rows) else 3


def mlp_config(args, n_features: int, n_classes: int) -> mlp.MlpConfig:
    cfg = load_config(args.config)
    base = mlp.MlpConfig.reference(args.dataset or "iris", n_features, n_classes, data_seed(args))
    merged = {**vars(base), **cfg}
    if args.epochs:
        merged["epochs"] = args.epochs
    if args.init_seed is not None:
        merged["init_seed"] = args.init_seed
    if args.reshare_range:
        merged["softmax_reshare_range"] = args.reshare_range
    return mlp.MlpConfig.from_dict(merged)


def load_blocks(args, party: Optional[int]) -> tuple[list[datasets.Block], int]:
    """Provider blocks and the test-set size. A socket party keeps only its own
    block; the others become zero placeholders that only convey shape."""
    if args.data:
        paths = [p.strip() for p in args.data.split(",")]
        if len(paths) != 3:
            raise ConfigurationError("--data needs three provider CSV paths")
        blocks = [datasets.read_block(p) for p in paths]
        n_rows = blocks[0].values.shape[0]
        n_test = args.n_test or max(1, round(0.2 * n_rows))
    else:
        if not args.dataset:
            raise ConfigurationError("give --dataset or --data")
        X, y, cols = datasets.load_builtin(args.dataset)
        parts = [int(v) for v in args.split.split(",")] if args.split else datasets.default_split(X.shape[1])
        blocks = [datasets.Block([cols[i] for i in idx], X[:, idx], y if k == 0 else None)
                  for k, idx in enumerate(datasets.split_columns(X.shape[1], parts))]
        n_test = args.n_test or datasets.SPLITS[args.dataset][1]
    if party is not None:
        # Labels stay visible only for the public stratified split, which the
        # label holder would publish; shares of them come from the holder.
        for k, b in enumerate(blocks):
            if k != party:
                b.values = np.zeros_like(b.values)
    return blocks, n_test


def _ingest(args, cl):
    party = args.party if args.mode == "socket" else None
    blocks, n_test = load_blocks(args, party)
    return mlp.ingest_vertical(cl, blocks, n_test, data_seed(args), standardize=not args.raw)


def cmd_train(args) -> int:
    with open_session(args) as cl:
        data = _ingest(args, cl)
        cfg = mlp_config(args, data.n_features, data.n_classes)
        model = mlp.init_model(cl, cfg)
        as_csv = args.csv
        records = []

        def progress(rec):
            records.append(rec)
            if not as_csv:
                emit([rec], False)

        model, metrics = mlp.train(cl, model, data, cfg, progress)
        if as_csv:
            emit(records, True)
        if args.checkpoint:
            mlp.save_checkpoint(args.checkpoint, model, [data_seed(args), cfg.init_seed])
        summary = {"final_accuracy": metrics[-1]["accuracy"], "epochs": cfg.epochs,
                   "layer_sizes": cfg.layer_sizes, "checkpoint": args.checkpoint}
        if not as_csv:
            emit([summary], False)
    return 0


def cmd_predict(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("predict needs --checkpoint")
    model, manifest = mlp.load_checkpoint(args.checkpoint)
    with open_session(args) as cl:
        data = _ingest(args, cl)
        x = cl.run(lambda p, f: mlp.protocols.take_rows(f, data.test_rows), data.features)
        rr = RandomRange.parse(args.reshare_range) if args.reshare_range else mlp.protocols.RESHARE_RANGE
        pred = mlp.predict(cl, model, x, mlp.USER, rr)
    if pred is None:
        emit([{"party": args.party, "predictions": None}], args.csv)
        return 0
    truth = data.label_truth[data.test_rows]
    if args.csv:
        emit([{"row": int(r), "predicted": int(p), "label": int(t)}
              for r, p, t in zip(data.test_rows, pred, truth)], True)
    else:
        emit([{"rows": data.test_rows.tolist(), "predictions": pred.tolist(),
               "accuracy": float(np.mean(pred == truth))}], False)
    return 0


def cmd_analyze(args) -> int:
    rep = secanalysis.analyze(args.lx, args.rx, args.lr, args.rr, args.trials, data_seed(args))
    if args.csv:
        rep = {**rep, "ci95": ";".join(map(str, rep["ci95"])),
               "safe_interval": "" if rep["safe_interval"] is None else ";".join(map(str, rep["safe_interval"]))}
    emit([rep], args.csv)
    return 0


def cmd_serve(args) -> int:
    args.mode = "socket"
    return {"bench": cmd_bench, "train": cmd_train, "predict": cmd_predict}[args.job](args)


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mode", choices=("inprocess", "socket"), default="inprocess")
    common.add_argument("--party", type=int, choices=(0, 1, 2))
    common.add_argument("--peers", help="host:port of P0,P1,P2 in order")
    common.add_argument("--seed", type=int, help="seed for session PRGs and public randomness")
    common.add_argument("--rtt-ms", type=float, default=0.0)
    common.add_argument("--bandwidth-bps", type=float, default=float("inf"))
    common.add_argument("--rand-range", help="mask range LO:HI")
    common.add_argument("--config", help="JSON file, or 'reference' (alias 'table4') for the reference settings")
    common.add_argument("--csv", action="store_true", help="emit CSV instead of JSON lines")
    common.add_argument("--timeout", type=float, default=60.0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="realrss", description="Three-party replicated sharing over reals.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("share", parents=[common], help="split a provider CSV into per-party share files")
    s.add_argument("--input", required=True)
    s.add_argument("--owner", type=int, choices=(0, 1, 2), default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--standardize", action="store_true")
    s.set_defaults(func=cmd_share)

    def add_bench(q):
        q.add_argument("--protocol", help="matmul, hadamard, relu, softmax, a comma list, or all")
        q.add_argument("--sizes", help="comma-separated n values")
        q.add_argument("--repetitions", type=int)
        q.add_argument("--span", type=int, help="exponent span x")
        q.add_argument("--transport", choices=("inprocess", "loopback"), default="inprocess")

    def add_data(q):
        q.add_argument("--dataset", choices=("iris", "wine"))
        q.add_argument("--data", help="three provider CSVs, comma-separated; the label holder has 'label'")
        q.add_argument("--split", help="feature counts per provider for built-in data, e.g. 2,1,1")
        q.add_argument("--n-test", type=int)
        q.add_argument("--raw", action="store_true", help="skip per-provider standardization")
        q.add_argument("--epochs", type=int)
        q.add_argument("--init-seed", type=int)
        q.add_argument("--reshare-range", help="mask range LO:HI for softmax inputs")
        q.add_argument("--checkpoint", help="model checkpoint directory")

    b = sub.add_parser("bench", parents=[common], help="time protocols, count traffic, measure error")
    add_bench(b)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", parents=[common], help="train the MLP on shared data")
    add_data(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="secure inference from a checkpoint")
    add_data(pr)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("analyze", parents=[common], help="range-inference analysis of a mask range")
    a.add_argument("--lx", type=float, required=True)
    a.add_argument("--rx", type=float, required=True)
    a.add_argument("--lr", type=float, required=True, help="PRG range low")
    a.add_argument("--rr", type=float, required=True, help="PRG range high")
    a.add_argument("--trials", type=int, default=1_000_000)
    a.set_defaults(func=cmd_analyze)

    sv = sub.add_parser("serve", parents=[common], help="run one party over TCP")
    sv.add_argument("--job", choices=JOBS, required=True)
    add_bench(sv)
    add_data(sv)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RssError, OSError) as exc:
        print(f"realrss {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
