"""Command line entry point: generate, train, evaluate and grid.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field

from rise.core import INSTANCE_KINDS, RiseConfig, RiseNetwork
from rise.data import SplitPolicy, SyntheticSpec, coerce, generate_synthetic, load_csv, read_kv, split, write_csv
from rise.encoders import ENCODER_KINDS
from rise.errors import ConfigurationError, DivergenceError, IngestionError
from rise.evaluation import PersistenceModel, evaluate, run_grid, write_lag_csv, write_report_csv
from rise.training import TrainConfig, per_series_policy, fit_network, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

_RISE_KEYS = {f.name for f in dataclasses.fields(RiseConfig)} - {"instance", "encoder"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"l2", "seed"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a ``train`` or ``grid`` config file can set."""

    rise: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    l2_grid: list = field(default_factory=lambda: [1e-4])
    split: SplitPolicy = field(default_factory=SplitPolicy)
    n_jobs: int = 1

    def rise_config(self, instance: str = "simple", encoder: str = "id") -> RiseConfig:
        return RiseConfig(instance=instance, encoder=encoder, **self.rise)

    def train_config(self, l2: float | None = None) -> TrainConfig:
        seed = self.rise.get("seed", 0)
        return TrainConfig(l2=self.l2_grid[0] if l2 is None else l2, seed=seed, **self.train)


def parse_run_config(values: dict[str, str]) -> RunConfig:
    """Split flat ``key=value`` settings into model, training and run options.

    ``l2`` may be a comma list, which ``grid`` validates over. ``seed``
    seeds both initialization and shuffling.
    """
    out = RunConfig()
    rise_defaults, train_defaults = RiseConfig(), TrainConfig()
    for key, raw in values.items():
        try:
            if key == "l2":
                out.l2_grid = [float(v) for v in raw.split(",") if v.strip()]
                if not out.l2_grid:
                    raise ValueError("empty l2 list")
            elif key == "split":
                out.split = SplitPolicy.parse(raw)
            elif key == "n_jobs":
                out.n_jobs = int(raw)
            elif key in _RISE_KEYS:
                out.rise[key] = coerce(raw, getattr(rise_defaults, key))
            elif key in _TRAIN_KEYS:
                out.train[key] = coerce(raw, getattr(train_defaults, key))
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"{key}: {exc}") from None
    out.rise_config()
    out.train_config()
    return out


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return parse_run_config(read_kv(path))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _load_corpus(path, policy: SplitPolicy):
    try:
        corpus = load_csv(path)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    return split(corpus, policy)


def _list_arg(text: str, allowed) -> list[str]:
    items = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise UsageError(f"expected a comma list from {', '.join(allowed)}, got {text!r}")
    return items


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    try:
        spec = SyntheticSpec.from_kv(read_kv(args.spec))
    except OSError as exc:
        raise UsageError(f"cannot read spec {args.spec}: {exc}") from None
    corpus = generate_synthetic(spec)
    write_csv(corpus, args.out)
    if args.truth:
        truth_series = [dataclasses.replace(s, x=v, m=s.m * 0 + 1) for s, v in zip(corpus.series, corpus.truth)]
        write_csv(truth_series, args.truth)
    print(f"wrote {len(corpus)} series, observed fraction {corpus.observed_fraction:.3f}, to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    corpus = _load_corpus(args.data, run.split)
    if len(run.l2_grid) > 1:
        print(f"note: train uses the first l2 value ({run.l2_grid[0]!r}); use grid to validate over the list", file=sys.stderr)
    rise_config = run.rise_config(args.instance, args.encoder)
    print("epoch\ttrain_loss\tval_mdape\tval_mape")
    network, ckpt = _train(run, corpus, rise_config)
    save_checkpoint(args.out, network, ckpt, {"split": str(run.split), "min_prior": run.train_config().min_prior})
    print(f"best validation MdAPE {ckpt.best_mdape.value!r} at epoch {ckpt.best_mdape.epoch}", file=sys.stderr)
    return EXIT_OK


def _train(run, corpus, rise_config):
    network = RiseNetwork(rise_config)
    network.fit_statistics(corpus.subset("train"), per_series_mean=per_series_policy(corpus))
    ckpt, _ = fit_network(
        network,
        corpus.subset("train"),
        corpus.subset("validation"),
        run.train_config(),
        on_epoch=lambda e: print(e.line(), flush=True),
    )
    return network, ckpt


def cmd_evaluate(args) -> int:
    try:
        network, ckpt, extra = load_checkpoint(args.ckpt)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {args.ckpt}: {exc}") from None
    policy = SplitPolicy.parse(args.split_policy or extra.get("split", "series:0.8,0.1,0.1"))
    corpus = _load_corpus(args.data, policy)
    series = corpus.series if args.split == "all" else corpus.subset(args.split)
    min_prior = args.min_prior if args.min_prior is not None else extra.get("min_prior", 10)
    rows = []
    for slot in ("best_mdape", "best_mape"):
        network.params.load(getattr(ckpt, slot).params)
        rows.append((slot, evaluate(network, series, min_prior=min_prior, gate=args.gate)))
    rows.append(("persistence", evaluate(PersistenceModel(network.delta_scale), series, min_prior=min_prior, gate=args.gate)))
    write_report_csv(rows, args.report)
    if args.lags:
        write_lag_csv(rows[0][1], args.lags)
    for name, r in rows:
        print(f"{name}\tn={r.n_predictions}\tMdAPE={r.mdape:.4f}\tMAPE={r.mape:.4f}")
    return EXIT_OK


def cmd_grid(args) -> int:
    run = load_run_config(args.config)
    instances = _list_arg(args.instances, INSTANCE_KINDS)
    encoders = _list_arg(args.encoders, ENCODER_KINDS)
    corpus = _load_corpus(args.data, run.split)
    n_jobs = args.n_jobs if args.n_jobs is not None else run.n_jobs
    result = run_grid(
        corpus,
        instances,
        encoders,
        run.rise_config(),
        run.train_config(),
        l2_grid=run.l2_grid,
        n_jobs=n_jobs,
        on_cell=lambda row: print(f"{row.instance}/{row.encoder}\t{row.status}", file=sys.stderr, flush=True),
    )
    result.write_csv(args.out)
    failed = [r for r in result.rows if r.mdape_report is None]
    print(f"wrote {len(result.rows)} cells to {args.out} ({len(failed)} failed)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rise", description="Recurrent imputation of univariate series with missing values.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--spec", required=True, help="key=value synthetic spec file")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--truth", help="also write the unmasked values to this CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one instance/encoder pair")
    p.add_argument("--data", required=True)
    p.add_argument("--instance", required=True, choices=INSTANCE_KINDS)
    p.add_argument("--encoder", required=True, choices=ENCODER_KINDS)
    p.add_argument("--config", help="key=value training config")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a data split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True, help="output CSV with one row per selection")
    p.add_argument("--lags", help="lag breakdown CSV for the MdAPE-selected parameters")
    p.add_argument("--split", default="test", choices=("train", "validation", "test", "all"))
    p.add_argument("--split-policy", help="override the split policy stored in the checkpoint")
    p.add_argument("--min-prior", type=int)
    p.add_argument("--gate", default="observed", choices=("observed", "steps"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="train and test every instance x encoder cell")
    p.add_argument("--data", required=True)
    p.add_argument("--instances", required=True, help="comma list")
    p.add_argument("--encoders", required=True, help="comma list")
    p.add_argument("--config", help="key=value config; l2 may be a comma list")
    p.add_argument("--out", required=True)
    p.add_argument("--n-jobs", type=int)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rise: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"rise: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except IngestionError as exc:
        print(f"rise: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigurationError as exc:
        print(f"rise: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
