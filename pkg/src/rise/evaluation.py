"""Next-observation imputation scoring, lag breakdown and the instance x encoder grid."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rise.core import INSTANCE_KINDS, MaskedSeries, RiseConfig, RiseNetwork, compute_delta
from rise.data import Corpus, lower_median

logger = logging.getLogger(__name__)


def ape(y: float, y_hat: float) -> float:
    """Absolute percentage error ``100 * |y - y_hat| / |y|``."""
    if y == 0:
        raise ValueError("APE is undefined for a zero ground truth")
    return 100.0 * abs((y - y_hat) / y)


def eligible_positions(series: MaskedSeries, min_prior: int = 10, gate: str = "observed") -> np.ndarray:
    """Observed indices preceded by at least ``min_prior`` observed values (or steps)."""
    if gate not in ("observed", "steps"):
        raise ValueError(f"gate must be 'observed' or 'steps', got {gate!r}")
    return np.flatnonzero((series.m == 1) & (_prior_counts(series, gate) >= min_prior))


def _prior_counts(series: MaskedSeries, gate: str) -> np.ndarray:
    m = series.m == 1
    if gate == "observed":
        return np.concatenate([[0], np.cumsum(m)[:-1]])
    return np.arange(m.size)


@dataclass
class EvalReport:
    n_predictions: int
    mdape: float
    mape: float
    n_excluded: int = 0
    lag_breakdown: dict = field(default_factory=dict)
    apes: np.ndarray = field(default=None, repr=False)
    lags: np.ndarray = field(default=None, repr=False)

    @property
    def defined(self) -> bool:
        return self.n_predictions > 0


def lag_breakdown(lags, apes) -> dict[int, tuple[int, float]]:
    """Bucket predictions by sampling periods since the last observation (rounded)."""
    lags = np.asarray(lags, dtype=np.float64)
    apes = np.asarray(apes, dtype=np.float64)
    buckets = np.rint(lags).astype(int)
    return {int(b): (int(np.sum(buckets == b)), lower_median(apes[buckets == b])) for b in np.unique(buckets)}


def summarize(apes, lags, n_excluded: int = 0) -> EvalReport:
    apes = np.asarray(apes, dtype=np.float64)
    lags = np.asarray(lags, dtype=np.float64)
    if apes.size == 0:
        return EvalReport(0, math.nan, math.nan, n_excluded, {}, apes, lags)
    return EvalReport(apes.size, lower_median(apes), float(apes.mean()), n_excluded, lag_breakdown(lags, apes), apes, lags)


class PersistenceModel:
    """Predicts the last observed value (forward fill)."""

    def __init__(self, delta_scale: float = 1.0):
        self.delta_scale = delta_scale

    def predict_series(self, series: list[MaskedSeries]) -> list[np.ndarray]:
        out = []
        for s in series:
            m = s.m == 1
            idx = np.where(m, np.arange(len(s)), -1)
            prev = np.concatenate([[-1], np.maximum.accumulate(idx)[:-1]])
            out.append(np.where(prev >= 0, s.x[np.maximum(prev, 0)], np.nan))
        return out


def evaluate(model, series: list[MaskedSeries], quantizer=None, min_prior: int = 10, gate: str = "observed", truth=None) -> EvalReport:
    """Score one-step-ahead predictions at every eligible observed position.

    ``model`` provides ``predict_series`` (entry ``j`` computed from steps
    before ``j``) and optionally ``delta_scale`` for the lag buckets. With
    ``truth`` (per-series arrays of true values, e.g. from a synthetic corpus)
    every gated position is scored against it, masked ones included; by
    default only observed targets count.
    ``quantizer`` is accepted for symmetry with training; networks carry their own.
    """
    if not series:
        return summarize([], [])
    predictions = model.predict_series(series)
    scale = getattr(model, "delta_scale", 1.0)
    apes, lags, excluded = [], [], 0
    for k, (s, pred) in enumerate(zip(series, predictions)):
        if truth is None:
            idx = eligible_positions(s, min_prior, gate)
            values = s.x
        else:
            idx = np.flatnonzero(_prior_counts(s, gate) >= min_prior)
            values = np.asarray(truth[k], dtype=np.float64)
        if idx.size == 0:
            continue
        delta = compute_delta(s.t, s.m, scale)
        y = values[idx]
        zero = y == 0
        excluded += int(zero.sum())
        idx, y = idx[~zero], y[~zero]
        apes.append(100.0 * np.abs((y - pred[idx]) / y))
        lags.append(delta[idx])
    if not apes:
        return summarize([], [], excluded)
    return summarize(np.concatenate(apes), np.concatenate(lags), excluded)


def write_report_csv(rows: list[tuple[str, EvalReport]], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["selection", "n_predictions", "mdape", "mape", "n_excluded"])
        for name, r in rows:
            w.writerow([name, r.n_predictions, repr(r.mdape), repr(r.mape), r.n_excluded])


def write_lag_csv(report: EvalReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "count", "mdape"])
        for lag in sorted(report.lag_breakdown):
            count, md = report.lag_breakdown[lag]
            w.writerow([lag, count, repr(md)])


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass
class GridRow:
    instance: str
    encoder: str
    l2: float
    mdape_report: EvalReport | None
    mape_report: EvalReport | None
    status: str = "ok"
    best_mdape: bool = False
    best_mape: bool = False


@dataclass
class GridResult:
    rows: list[GridRow]
    baseline: EvalReport

    def cell(self, instance: str, encoder: str) -> GridRow:
        for row in self.rows:
            if row.instance == instance and row.encoder == encoder:
                return row
        raise KeyError((instance, encoder))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance", "encoder", "l2", "n_predictions", "mdape", "mape", "best_mdape", "best_mape", "status"])
        for r in self.rows:
            ok = r.mdape_report is not None
            w.writerow([
                r.instance,
                r.encoder,
                repr(r.l2),
                r.mdape_report.n_predictions if ok else "",
                repr(r.mdape_report.mdape) if ok else "",
                repr(r.mape_report.mape) if ok else "",
                int(r.best_mdape),
                int(r.best_mape),
                r.status,
            ])
        b = self.baseline
        w.writerow(["persistence", "none", "", b.n_predictions, repr(b.mdape), repr(b.mape), 0, 0, "baseline"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _train_cell(args):
    from rise.training import fit_network

    corpus, rise_config, train_config, l2_grid, quantizer, per_series = args
    train, validation, test = corpus.subset("train"), corpus.subset("validation"), corpus.subset("test")
    best = None
    for l2 in l2_grid:
        network = RiseNetwork(rise_config)
        network.fit_statistics(train, per_series_mean=per_series, quantizer=quantizer)
        ckpt, _ = fit_network(network, train, validation, replace(train_config, l2=l2))
        score = ckpt.best_mdape.value
        if best is None or (math.isfinite(score) and not score >= best[0]):
            best = (score, l2, network, ckpt)
    _, l2, network, ckpt = best
    network.params.load(ckpt.best_mdape.params)
    md = evaluate(network, test, min_prior=train_config.min_prior)
    network.params.load(ckpt.best_mape.params)
    ma = evaluate(network, test, min_prior=train_config.min_prior)
    return l2, md, ma


def run_grid(
    corpus: Corpus,
    instances,
    encoders,
    rise_config: RiseConfig,
    train_config,
    l2_grid=None,
    n_jobs: int = 1,
    on_cell=None,
) -> GridResult:
    """Train and test every (instance, encoder) cell with one shared target quantizer.

    Each cell validates the L2 coefficient over ``l2_grid`` by best validation
    MdAPE. A failing cell is recorded with its error and the grid moves on.
    """
    from rise.data import fit_target_quantizer
    from rise.training import per_series_policy

    instances, encoders = list(instances), list(encoders)
    if not instances or not encoders:
        raise ValueError("grid needs at least one instance and one encoder")
    for inst in instances:
        if inst not in INSTANCE_KINDS:
            raise ValueError(f"unknown instance {inst!r}")
    l2_grid = list(l2_grid) if l2_grid else [train_config.l2]
    train = corpus.subset("train")
    quantizer = None
    if rise_config.objective == "classification":
        quantizer = fit_target_quantizer(np.concatenate([s.observed for s in train]), rise_config.n_classes)
    per_series = per_series_policy(corpus)
    cells = [(i, e) for i in instances for e in encoders]
    jobs = [(corpus, replace(rise_config, instance=i, encoder=e), train_config, l2_grid, quantizer, per_series) for i, e in cells]

    rows: list[GridRow] = []

    def record(cell, outcome):
        inst, enc = cell
        if isinstance(outcome, Exception):
            row = GridRow(inst, enc, math.nan, None, None, status=f"failed: {type(outcome).__name__}: {outcome}")
        else:
            l2, md, ma = outcome
            row = GridRow(inst, enc, l2, md, ma)
        rows.append(row)
        logger.info("cell %s/%s: %s", inst, enc, row.status if row.mdape_report is None else f"MdAPE {row.mdape_report.mdape:.3f}")
        if on_cell is not None:
            on_cell(row)

    if n_jobs == 1:
        for cell, job in zip(cells, jobs):
            try:
                outcome = _train_cell(job)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                outcome = exc
            record(cell, outcome)
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_train_cell, job) for job in jobs]
            for cell, fut in zip(cells, futures):
                try:
                    outcome = fut.result()
                except Exception as exc:  # noqa: BLE001
                    outcome = exc
                record(cell, outcome)

    _flag_best(rows)
    scale = float(np.median(np.concatenate([np.diff(s.t) for s in train])))
    baseline = evaluate(PersistenceModel(scale), corpus.subset("test"), min_prior=train_config.min_prior)
    return GridResult(rows, baseline)


def _flag_best(rows: list[GridRow]) -> None:
    for inst in dict.fromkeys(r.instance for r in rows):
        group = [r for r in rows if r.instance == inst and r.mdape_report is not None]
        if not group:
            continue
        md = min(r.mdape_report.mdape for r in group)
        ma = min(r.mape_report.mape for r in group)
        for r in group:
            r.best_mdape = r.mdape_report.mdape == md
            r.best_mape = r.mape_report.mape == ma
