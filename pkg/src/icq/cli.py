"""Command-line interface: gen, train, search, bench, inspect.

Usage errors exit 2 (argparse), runtime failures exit 1, success exits 0.
Every command echoes its resolved configuration to stderr; payload outputs
go to files and are byte-identical for equal seeds. The ICQ_THREADS
environment variable caps query-evaluation parallelism in bench.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    Config,
    FormatError,
    ValidationError,
    load_dataset,
    load_index,
    save_dataset,
    save_index,
)
from .datagen import SynthSpec, generate
from .evaluate import run_benchmark, unseen_class_split
from .search import search_bruteforce, search_exact, search_two_step
from .train import TrainingError, encode_dataset, train

_CFG_DEFAULTS = Config()


def _echo(command: str, args: argparse.Namespace) -> None:
    pairs = sorted(
        (k, v) for k, v in vars(args).items() if k != "func" and not k.startswith("_")
    )
    rendered = " ".join(f"{k}={v}" for k, v in pairs)
    print(f"# {command}: {rendered}", file=sys.stderr)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=_CFG_DEFAULTS.K, help="number of codebooks")
    p.add_argument("--m", type=int, default=_CFG_DEFAULTS.m, help="codewords per codebook")
    p.add_argument("--gamma1", type=float, default=_CFG_DEFAULTS.gamma1)
    p.add_argument("--gamma2", type=float, default=_CFG_DEFAULTS.gamma2)
    p.add_argument("--pi1", type=float, default=_CFG_DEFAULTS.pi1)
    p.add_argument("--pi2", type=float, default=_CFG_DEFAULTS.pi2)
    p.add_argument("--alpha2", type=float, default=_CFG_DEFAULTS.alpha2)
    p.add_argument("--sigma-scale", type=float, default=_CFG_DEFAULTS.sigma_scale)
    p.add_argument("--epochs", type=int, default=_CFG_DEFAULTS.epochs)
    p.add_argument("--batch-size", type=int, default=_CFG_DEFAULTS.batch_size)
    p.add_argument("--learning-rate", type=float, default=_CFG_DEFAULTS.learning_rate)
    p.add_argument("--seed", type=int, default=_CFG_DEFAULTS.seed)


def _config_from(args: argparse.Namespace) -> Config:
    return Config(
        K=args.K,
        m=args.m,
        gamma1=args.gamma1,
        gamma2=args.gamma2,
        pi1=args.pi1,
        pi2=args.pi2,
        alpha2=args.alpha2,
        sigma_scale=args.sigma_scale,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _threads_from_env() -> int:
    value = os.environ.get("ICQ_THREADS", "1")
    threads = int(value)
    if threads < 1:
        raise ValidationError(f"ICQ_THREADS must be >= 1, got {value}")
    return threads


def cmd_gen(args: argparse.Namespace) -> int:
    _echo("gen", args)
    spec = SynthSpec(
        n_train=args.n_train,
        n_test=args.n_test,
        d=args.d,
        informative=args.informative,
        redundant=args.redundant,
        classes=args.classes,
        class_sep=args.class_sep,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    train_ds, test_ds, info_dims = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_ds, out / "train.icqd")
    save_dataset(test_ds, out / "test.icqd")
    (out / "informative_dims.txt").write_text("".join(f"{i}\n" for i in info_dims))
    print(f"# wrote {out / 'train.icqd'} ({train_ds.n}x{train_ds.d})", file=sys.stderr)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _echo("train", args)
    ds = load_dataset(args.in_path)
    cfg = _config_from(args)
    index, report = train(
        ds, cfg, with_embedder=args.with_embedder, psi_cap=args.psi_cap
    )
    save_index(index, args.out)
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".csv")
    lines = ["epoch,L_C,L_P,L_ICQ,L_E,psi,K_fast"]
    for e in range(report.epochs):
        lines.append(
            f"{e},{report.l_c[e]!r},{report.l_p[e]!r},{report.l_icq[e]!r},"
            f"{report.l_e[e]!r},{report.psi_sizes[e]},{report.fast_sizes[e]}"
        )
    report_path.write_text("\n".join(lines) + "\n")
    print(
        f"# trained: psi={int(index.xi.sum())} fast={index.fast.tolist()} "
        f"sigma={index.sigma!r}",
        file=sys.stderr,
    )
    return 0


def _search_sigma(args: argparse.Namespace, index) -> float | None:
    if args.sigma_scale is None:
        return None
    lam = index.lambdas.astype(np.float64)
    return args.sigma_scale * float(lam[index.xi == 0].sum())


def cmd_search(args: argparse.Namespace) -> int:
    _echo("search", args)
    queries = load_dataset(args.queries)
    if args.mode == "brute":
        if args.data is None:
            raise ValidationError("brute mode needs --data with the raw dataset")
        ds = load_dataset(args.data)
        runner = lambda q: search_bruteforce(ds, q, args.k)
    else:
        if args.index is None:
            raise ValidationError(f"{args.mode} mode needs --index")
        index = load_index(args.index)
        if args.mode == "exact":
            runner = lambda q: search_exact(index, q, args.k)
        else:
            sigma = _search_sigma(args, index)
            runner = lambda q: search_two_step(index, q, args.k, sigma=sigma)

    lines = ["query,rank,id,score,fast_adds,exact_adds,lut_ops,fallback"]
    for qi in range(queries.n):
        res = runner(queries.vectors[qi])
        for rank, (i, s) in enumerate(zip(res.ids, res.scores)):
            lines.append(
                f"{qi},{rank},{i},{float(s)!r},{res.ops.fast_adds},"
                f"{res.ops.exact_adds},{res.ops.lut_ops},{int(res.fallback)}"
            )
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    _echo("bench", args)
    ds = load_dataset(args.in_path)
    threads = _threads_from_env()
    cfg = _config_from(args)

    if args.unseen_fraction is not None:
        seen, unseen = unseen_class_split(ds, args.unseen_fraction, cfg.seed)
        trained, _ = train(seen, cfg)
        index = encode_dataset(trained, unseen)
        database, queries, truth = unseen, unseen, "labels"
    else:
        if args.queries is None:
            raise ValidationError("bench needs --queries unless --unseen-fraction is set")
        queries = load_dataset(args.queries)
        if args.index:
            index = load_index(args.index)
        else:
            index, _ = train(ds, cfg)
        database = ds
        labeled = database.labels is not None and queries.labels is not None
        truth = "labels" if labeled else "brute"

    report = run_benchmark(index, database, queries, truth=truth, k=args.k, threads=threads)
    Path(args.out).write_text(report.to_csv())
    print(
        f"# bench: map={report.map!r} map_exact={report.map_exact!r} "
        f"avg_ops={report.avg_ops!r} avg_ops_exact={report.avg_ops_exact!r} "
        f"ecl={report.effective_code_length!r} fallbacks={report.fallbacks}",
        file=sys.stderr,
    )
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    _echo("inspect", args)
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic == b"ICQD":
        ds = load_dataset(args.path)
        print(f"dataset: n={ds.n} d={ds.d} labeled={ds.labels is not None}")
        if ds.labels is not None and ds.n:
            print(f"classes: {np.unique(ds.labels).size}")
    elif magic == b"ICQI":
        index = load_index(args.path)
        cfg = index.cfg
        print(f"index: n={index.n} d={index.d} K={cfg.K} m={cfg.m}")
        print(f"psi: {int(index.xi.sum())} of {index.d} dims")
        print(f"fast: {index.fast.tolist()}")
        print(f"sigma: {index.sigma!r}")
        print(
            f"config: gamma1={cfg.gamma1} gamma2={cfg.gamma2} sigma_scale={cfg.sigma_scale} "
            f"epochs={cfg.epochs} batch_size={cfg.batch_size} "
            f"learning_rate={cfg.learning_rate} seed={cfg.seed}"
        )
    else:
        raise FormatError(f"unrecognized magic {magic!r} in {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled train/test pair")
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--informative", type=int, required=True)
    p.add_argument("--redundant", type=int, default=None)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--class-sep", type=float, default=2.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train an index from a dataset file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--report", default=None, help="per-epoch loss CSV path")
    p.add_argument("--with-embedder", action="store_true")
    p.add_argument("--psi-cap", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="query an index (or brute-force a dataset)")
    p.add_argument("--index", default=None)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=["two-step", "exact", "brute"], default="two-step")
    p.add_argument("--sigma-scale", type=float, default=None,
                   help="recompute the margin from the stored variances")
    p.add_argument("--data", default=None, help="raw dataset for brute mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="train (or load) an index and report metrics")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--queries", default=None)
    p.add_argument("--index", default=None, help="skip training, load this index")
    p.add_argument("--unseen-fraction", type=float, default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="summarize a dataset or index file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, TrainingError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
