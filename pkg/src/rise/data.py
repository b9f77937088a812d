"""Corpus ingestion, synthetic generation, splitting and target discretization."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rise.core import MaskedSeries
from rise.encoders import quantile_edges
from rise.errors import ConfigurationError, IngestionError

SPLITS = ("train", "validation", "test")
CSV_HEADER = ("series_id", "time", "value")


@dataclass
class Corpus:
    """Series with optional per-series split labels and synthetic ground truth."""

    series: list[MaskedSeries]
    labels: list[str] | None = None
    truth: list[np.ndarray] | None = None
    policy: str | None = None

    def __len__(self) -> int:
        return len(self.series)

    def subset(self, split: str) -> list[MaskedSeries]:
        if self.labels is None:
            raise ConfigurationError("corpus has no split labels; call split() first")
        return [s for s, lab in zip(self.series, self.labels) if lab == split]

    def truth_for(self, split: str) -> list[np.ndarray]:
        if self.truth is None:
            raise ConfigurationError("corpus carries no ground truth")
        return [v for v, lab in zip(self.truth, self.labels) if lab == split]

    @property
    def value_range(self) -> tuple[float, float]:
        obs = np.concatenate([s.observed for s in self.series])
        return float(obs.min()), float(obs.max())

    @property
    def sampling_period(self) -> float:
        diffs = np.concatenate([np.diff(s.t) for s in self.series])
        return float(np.median(diffs)) if diffs.size else 1.0

    @property
    def observed_fraction(self) -> float:
        return float(np.mean(np.concatenate([s.m for s in self.series])))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(path) -> Corpus:
    """Read ``series_id,time,value`` rows; an empty value marks a missing observation.

    Rows of one series must appear in strictly increasing time order. Series
    keep the order in which their ids first appear.
    """
    path = Path(path)
    groups: dict[str, tuple[list[float], list[float], list[int]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_HEADER) <= set(reader.fieldnames):
            raise IngestionError(f"{path}: header must name columns {', '.join(CSV_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            sid = row["series_id"].strip()
            try:
                t = float(row["time"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{row_no}: series {sid}: unparseable time {row['time']!r}") from None
            raw = (row["value"] or "").strip()
            try:
                x = float(raw) if raw else math.nan
            except ValueError:
                raise IngestionError(f"{path}:{row_no}: series {sid}: unparseable value {raw!r}") from None
            if raw and not math.isfinite(x):
                raise IngestionError(f"{path}:{row_no}: series {sid}: non-finite value {raw!r}")
            ts, xs, ms = groups.setdefault(sid, ([], [], []))
            if ts and t == ts[-1]:
                raise IngestionError(f"{path}:{row_no}: series {sid}: duplicate timestamp {t!r}")
            if ts and t < ts[-1]:
                raise IngestionError(f"{path}:{row_no}: series {sid}: time {t!r} goes backwards from {ts[-1]!r}")
            ts.append(t)
            xs.append(x)
            ms.append(1 if raw else 0)
    if not groups:
        raise IngestionError(f"{path}: no data rows")
    series = []
    for sid, (ts, xs, ms) in groups.items():
        if not any(ms):
            raise IngestionError(f"{path}: series {sid} has no observed values")
        series.append(MaskedSeries(np.array(ts), np.array(xs), np.array(ms), sid))
    return Corpus(series)


def write_csv(corpus: Corpus | list[MaskedSeries], path) -> None:
    series = corpus.series if isinstance(corpus, Corpus) else corpus
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in series:
            for t, x, m in zip(s.t, s.x, s.m):
                w.writerow([s.series_id, repr(float(t)), repr(float(x)) if m else ""])


# ---------------------------------------------------------------------------
# flat key=value configs
# ---------------------------------------------------------------------------


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def coerce(value: str, like):
    """Convert config text to the type of the default ``like``."""
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(float(v) for v in value.split(",") if v.strip())
    return value


def dataclass_from_kv(cls, values: dict[str, str], strict: bool = True):
    defaults = cls()
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, raw in values.items():
        if key not in names:
            if strict:
                raise ConfigurationError(f"unknown {cls.__name__} key {key!r}")
            continue
        try:
            kwargs[key] = coerce(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Offset plus a sum of sinusoids plus Gaussian noise, with masked observations.

    ``block_rate`` is the fraction of each series hidden in contiguous blocks
    whose lengths are ``1 + Poisson(block_length - 1)``; ``mcar_rate`` hides
    points independently on top of that.
    """

    n_series: int = 200
    length: int = 100
    offset: float = 100.0
    amplitudes: tuple = (20.0, 10.0)
    periods: tuple = (16.0, 7.0)
    phases: tuple = (0.0, 0.0)
    random_phase: bool = True
    noise_std: float = 1.5
    mcar_rate: float = 0.4
    block_rate: float = 0.0
    block_length: float = 8.0
    sampling_period: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (len(self.amplitudes) == len(self.periods) == len(self.phases)):
            raise ConfigurationError("amplitudes, periods and phases need equal lengths")
        if not 0.0 <= self.mcar_rate <= 1.0 or not 0.0 <= self.block_rate <= 1.0:
            raise ConfigurationError("missingness rates must lie in [0, 1]")
        if self.n_series < 1 or self.length < 1 or self.block_length < 1:
            raise ConfigurationError("n_series, length and block_length must be positive")

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "SyntheticSpec":
        return dataclass_from_kv(cls, values)


def _block_mask(rng: np.random.Generator, n: int, rate: float, mean_length: float) -> np.ndarray:
    hidden = np.zeros(n, dtype=bool)
    target = int(round(rate * n))
    count = 0
    while count < target:
        start = int(rng.integers(n))
        length = 1 + int(rng.poisson(mean_length - 1.0))
        for j in range(start, min(n, start + length)):
            if count < target and not hidden[j]:
                hidden[j] = True
                count += 1
    return hidden


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    rng = np.random.default_rng(spec.seed)
    amps = np.asarray(spec.amplitudes, dtype=np.float64)
    periods = np.asarray(spec.periods, dtype=np.float64)
    base_phase = np.asarray(spec.phases, dtype=np.float64)
    t = np.arange(spec.length) * spec.sampling_period
    steps = np.arange(spec.length)
    series, truth = [], []
    for k in range(spec.n_series):
        phase = base_phase + (rng.uniform(0, 2 * np.pi, size=amps.size) if spec.random_phase else 0.0)
        clean = spec.offset + np.sum(amps[:, None] * np.sin(2 * np.pi * steps[None, :] / periods[:, None] + phase[:, None]), axis=0)
        values = clean + rng.normal(0.0, spec.noise_std, size=spec.length)
        hidden = rng.random(spec.length) < spec.mcar_rate
        if spec.block_rate > 0:
            hidden |= _block_mask(rng, spec.length, spec.block_rate, spec.block_length)
        if hidden.all():
            hidden[int(rng.integers(spec.length))] = False
        m = (~hidden).astype(np.int8)
        x = np.where(m == 1, values, np.nan)
        series.append(MaskedSeries(t.copy(), x, m, f"s{k:04d}"))
        truth.append(values)
    return Corpus(series, truth=truth)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass
class SplitPolicy:
    """``series``: consecutive fractions of the series list; ``time``: fractions of the time span."""

    kind: str = "series"
    fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.kind not in ("series", "time"):
            raise ConfigurationError(f"split policy must be 'series' or 'time', got {self.kind!r}")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions) or not math.isclose(sum(self.fractions), 1.0):
            raise ConfigurationError(f"split fractions must be three nonnegative numbers summing to 1, got {self.fractions}")

    def __str__(self) -> str:
        return f"{self.kind}:{','.join(repr(float(f)) for f in self.fractions)}"

    @classmethod
    def parse(cls, text: str) -> "SplitPolicy":
        kind, _, fr = text.partition(":")
        fractions = tuple(float(v) for v in fr.split(",")) if fr else (0.8, 0.1, 0.1)
        return cls(kind.strip(), fractions)


def split(corpus: Corpus, policy: SplitPolicy | str = SplitPolicy()) -> Corpus:
    if isinstance(policy, str):
        policy = SplitPolicy.parse(policy)
    if policy.kind == "series":
        n = len(corpus.series)
        n_train = int(round(policy.fractions[0] * n))
        n_val = int(round(policy.fractions[1] * n))
        labels = ["train"] * n_train + ["validation"] * n_val + ["test"] * (n - n_train - n_val)
        out = Corpus(list(corpus.series), labels[:n], corpus.truth, str(policy))
    else:
        out = _split_by_time(corpus, policy)
    for name in SPLITS:
        if name not in out.labels:
            raise ConfigurationError(f"split policy {policy} leaves the {name} split empty")
    return out


def _split_by_time(corpus: Corpus, policy: SplitPolicy) -> Corpus:
    t_min = min(s.t[0] for s in corpus.series)
    t_max = max(s.t[-1] for s in corpus.series)
    span = t_max - t_min
    c1 = t_min + policy.fractions[0] * span
    c2 = c1 + policy.fractions[1] * span
    series, labels, truth = [], [], []
    for k, s in enumerate(corpus.series):
        region = np.where(s.t < c1, 0, np.where(s.t < c2, 1, 2))
        for code, name in enumerate(SPLITS):
            sel = region == code
            if not sel.any() or not s.m[sel].any():
                continue
            series.append(MaskedSeries(s.t[sel], s.x[sel], s.m[sel], s.series_id))
            labels.append(name)
            if corpus.truth is not None:
                truth.append(corpus.truth[k][sel])
    return Corpus(series, labels, truth if corpus.truth is not None else None, str(policy))


# ---------------------------------------------------------------------------
# target discretization
# ---------------------------------------------------------------------------


@dataclass
class TargetQuantizer:
    """Quantile classes over training values with per-class median representatives.

    Class ``c`` covers ``(edges[c-1], edges[c]]``; the first class extends to
    minus infinity and the last to plus infinity.
    """

    edges: np.ndarray
    representatives: np.ndarray = field(repr=False)

    @property
    def n_classes(self) -> int:
        return self.edges.size + 1

    def classify(self, values) -> np.ndarray:
        return np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side="left")

    def representative(self, cls) -> np.ndarray:
        return self.representatives[np.asarray(cls)]

    def bounds(self, cls: int) -> tuple[float, float]:
        lo = -math.inf if cls == 0 else float(self.edges[cls - 1])
        hi = math.inf if cls == self.n_classes - 1 else float(self.edges[cls])
        return lo, hi

    def state(self) -> dict:
        return {"edges": self.edges.tolist(), "representatives": self.representatives.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "TargetQuantizer":
        return cls(np.asarray(state["edges"], dtype=np.float64), np.asarray(state["representatives"], dtype=np.float64))


def lower_median(values) -> float:
    s = np.sort(np.asarray(values, dtype=np.float64))
    return float(s[(s.size - 1) // 2])


def fit_target_quantizer(values, n_classes: int = 128) -> TargetQuantizer:
    """Quantile classes; repeated edges from tied values are merged, so fewer classes may result."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    edges = np.unique(quantile_edges(values, n_classes))
    if values.max() <= edges[-1]:
        edges = edges[:-1]
    if edges.size == 0:
        raise ConfigurationError("training values are too concentrated to form two classes")
    classes = np.searchsorted(edges, values, side="left")
    reps = np.array([lower_median(values[classes == c]) for c in range(edges.size + 1)])
    return TargetQuantizer(edges, reps)
