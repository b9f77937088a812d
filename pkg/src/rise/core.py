"""Recursive input and state estimation over univariate masked series.

A :class:`RiseNetwork` walks a series step by step. At each step it encodes
the time gap since the last observation, derives discount factors, builds a
replacement for a missing value, selects observed-or-replacement, applies the
instance's input and hidden-state transforms and advances a GRU stack.

Series are processed in batches laid out time-major: row ``i * B + b`` of a
flattened ``[N * B, ...]`` array holds step ``i`` of series ``b``. Everything
that does not depend on the recurrence (encodings of observed values, time
gaps, discounts, forward-filled replacements) is computed for the whole batch
before the loop; only the regression replacement ``W_x h + b_x`` runs inside.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from rise import autodiff as ad
from rise.autodiff import ParameterStore, Tensor, xavier_uniform
from rise.cells import GruParams, StackState, init_params, seeded_rng, stack_step, zero_state
from rise.encoders import Encoder, make_encoder
from rise.errors import ConfigurationError, ContractError, DimensionError


class InstanceKind(str, enum.Enum):
    SIMPLE = "simple"
    ZEROFILL = "zerofill"
    FWDFILL = "fwdfill"
    RITS_I = "rits-i"
    GRU_D = "gru-d"

    @property
    def uses_decay(self) -> bool:
        return self in (InstanceKind.RITS_I, InstanceKind.GRU_D)

    @property
    def regresses_replacement(self) -> bool:
        return self in (InstanceKind.SIMPLE, InstanceKind.RITS_I)

    @property
    def indicator(self) -> str | None:
        """Which mask bit is appended to the input: ``complement``, ``mask`` or none."""
        if self in (InstanceKind.ZEROFILL, InstanceKind.FWDFILL):
            return "complement"
        if self.uses_decay:
            return "mask"
        return None


INSTANCE_KINDS = tuple(k.value for k in InstanceKind)


@dataclass
class MaskedSeries:
    """Timestamps ``t``, values ``x`` and observation mask ``m`` of one series.

    Values at unobserved positions are carried along but never read.
    """

    t: np.ndarray
    x: np.ndarray
    m: np.ndarray
    series_id: str = "0"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        m = np.asarray(self.m).reshape(-1)
        if not (len(self.t) == len(self.x) == len(m)):
            raise DimensionError(f"series {self.series_id}: t, x, m lengths {len(self.t)}, {len(self.x)}, {len(m)}")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"series {self.series_id}: mask must be binary")
        self.m = m.astype(np.int8)
        if len(self.t) == 0 or not self.m.any():
            raise ValueError(f"series {self.series_id}: needs at least one observed value")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"series {self.series_id}: timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.x[self.m == 1])):
            raise ValueError(f"series {self.series_id}: observed values must be finite")
        self.series_id = str(self.series_id)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def observed(self) -> np.ndarray:
        return self.x[self.m == 1]

    def with_mask(self, m) -> "MaskedSeries":
        return MaskedSeries(self.t, self.x, m, self.series_id)

    def prefix(self, n: int) -> "MaskedSeries":
        return MaskedSeries(self.t[:n], self.x[:n], self.m[:n], self.series_id)


def compute_delta(t, m, scale: float = 1.0) -> np.ndarray:
    """Time since the last observed value, accumulated through missing steps.

    ``delta[0] = 0``; afterwards ``delta[i] = t[i] - t[i-1]`` when step ``i-1``
    was observed and ``t[i] - t[i-1] + delta[i-1]`` when it was not. Times are
    divided by ``scale`` (the training median sampling interval) first.
    """
    t = np.asarray(t, dtype=np.float64) / scale
    m = np.asarray(m)
    delta = np.zeros(t.shape)
    for i in range(1, t.size):
        gap = t[i] - t[i - 1]
        delta[i] = gap if m[i - 1] == 1 else gap + delta[i - 1]
    return delta


def last_observed(x, m, fallback: float) -> tuple[np.ndarray, np.ndarray]:
    """Value at the last observed index strictly before each step, and whether one exists."""
    m = np.asarray(m).astype(bool)
    idx = np.where(m, np.arange(m.size), -1)
    prev = np.concatenate([[-1], np.maximum.accumulate(idx)[:-1]])
    has = prev >= 0
    values = np.where(has, np.asarray(x, dtype=np.float64)[np.maximum(prev, 0)], fallback)
    return values, has


# ---------------------------------------------------------------------------
# per-step building blocks
# ---------------------------------------------------------------------------


@dataclass
class DiscountParams:
    weight: Tensor  # [out, d_enc]
    bias: Tensor  # [out]


def discount(params: DiscountParams, e_delta) -> Tensor:
    """``exp(-max(0, W e + b))``, componentwise in (0, 1]."""
    e_delta = ad.as_tensor(e_delta)
    pre = ad.linear(e_delta, params.weight, params.bias)
    return ad.exp(ad.neg(ad.max0(pre)))


@dataclass
class RiseAux:
    """Per-row side information for building the replacement input."""

    x_last: np.ndarray
    x_av: np.ndarray
    has_last: np.ndarray
    W_x: Tensor | None = None
    b_x: Tensor | None = None


def replacement_input(kind: InstanceKind, aux: RiseAux, h_prev, gamma_x, enc: Encoder) -> Tensor:
    """Instance-specific substitute for a missing value, in encoded space."""
    kind = InstanceKind(kind)
    if kind.regresses_replacement:
        if h_prev is None or aux.W_x is None:
            raise ContractError(f"{kind.value} replacement needs the previous hidden state and W_x, b_x")
        return ad.linear(h_prev, aux.W_x, aux.b_x)
    if kind is InstanceKind.ZEROFILL:
        return enc.encode(np.zeros(np.size(aux.x_last)))
    if kind is InstanceKind.FWDFILL:
        return enc.encode(aux.x_last)
    e_last = enc.encode(aux.x_last)
    e_av = enc.encode(aux.x_av)
    mixed = ad.add(ad.mul(gamma_x, e_last), ad.mul(ad.sub(1.0, gamma_x), e_av))
    has = np.asarray(aux.has_last, dtype=bool).reshape(-1, 1)
    if has.all():
        return mixed
    return ad.where(has, mixed, e_av)


def conditional_replace(e_obs, m, e_tilde) -> Tensor:
    """Observed encoding where ``m`` is 1, replacement encoding elsewhere."""
    e_tilde = ad.as_tensor(e_tilde)
    m = np.asarray(m, dtype=bool)
    if e_obs is None:
        if m.any():
            raise ContractError("observed position without an observed encoding")
        return e_tilde
    e_obs = ad.as_tensor(e_obs)
    if m.ndim == 0:
        return e_obs if m else e_tilde
    cond = m.reshape(-1, *([1] * (e_obs.ndim - 1)))
    return ad.where(cond, e_obs, e_tilde)


def transform_input(kind: InstanceKind, e_c, m) -> Tensor:
    """Append the mask bit (or its complement) as one extra slot, per instance."""
    kind = InstanceKind(kind)
    e_c = ad.as_tensor(e_c)
    if kind.indicator is None:
        return e_c
    bit = np.asarray(m, dtype=np.float64)
    if kind.indicator == "complement":
        bit = 1.0 - bit
    if e_c.ndim == 1:
        return ad.concat([e_c, Tensor(bit.reshape(1))], axis=0)
    return ad.concat([e_c, Tensor(bit.reshape(-1, 1))], axis=1)


def transform_hidden(kind: InstanceKind, h_prev, gamma_h) -> Tensor:
    kind = InstanceKind(kind)
    h_prev = ad.as_tensor(h_prev)
    if not kind.uses_decay:
        return h_prev
    gamma_h = ad.as_tensor(gamma_h)
    if gamma_h.shape != h_prev.shape:
        raise DimensionError(f"decay {gamma_h.shape} does not match hidden state {h_prev.shape}")
    return ad.mul(gamma_h, h_prev)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


@dataclass
class RiseConfig:
    instance: str = "simple"
    encoder: str = "id"
    d: int = 64
    d_d: int = 64
    d_h: int = 64
    n_layers: int = 2
    n_classes: int = 128
    n_bin: int = 50
    precision: int = 2
    delta_precision: int = 2
    objective: str = "classification"
    seed: int = 0
    standardize_identity: bool = True

    def __post_init__(self):
        self.instance = InstanceKind(self.instance).value
        if self.objective not in ("classification", "regression"):
            raise ConfigurationError(f"objective must be classification or regression, got {self.objective!r}")
        for name in ("d", "d_d", "d_h", "n_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ConfigurationError("n_classes must be >= 2")

    @property
    def kind(self) -> InstanceKind:
        return InstanceKind(self.instance)


@dataclass
class SeriesBatch:
    """Time-major padded arrays for ``B`` series of up to ``N`` steps."""

    series_ids: list[str]
    x: np.ndarray  # [N, B] observed values, placeholder elsewhere
    m: np.ndarray  # [N, B] bool
    valid: np.ndarray  # [N, B] bool, False on padding
    delta: np.ndarray  # [N, B] normalized time gaps
    x_last: np.ndarray  # [N, B]
    has_last: np.ndarray  # [N, B] bool
    x_av: np.ndarray  # [B]

    @property
    def n_steps(self) -> int:
        return self.x.shape[0]

    @property
    def size(self) -> int:
        return self.x.shape[1]


@dataclass
class ForwardResult:
    hidden: list[Tensor]  # top-layer state after each step, each [B, d_h]
    inputs: list[Tensor]  # transformed input fed to the stack at each step
    replacements: int = 0
    layers: list[list[Tensor]] = field(default_factory=list)


class RiseNetwork:
    """Parameters, fitted statistics and the forward recursion for one instance."""

    def __init__(self, config: RiseConfig):
        self.config = config
        self.kind = config.kind
        self.params = ParameterStore()
        self.delta_scale = 1.0
        self.x_av_global = 0.0
        self.x_av_table: dict[str, float] = {}
        self.quantizer = None
        self.x_encoder: Encoder | None = None
        self.delta_encoder: Encoder | None = None
        self.layers: list[GruParams] = []
        self.gamma_x: DiscountParams | None = None
        self.gamma_h: DiscountParams | None = None
        self.W_x: Tensor | None = None
        self.b_x: Tensor | None = None
        self.built = False

    # -- fitting -----------------------------------------------------------

    def _make_encoders(self):
        c = self.config
        self.x_encoder = make_encoder(
            c.encoder, c.d, c.d_d, c.n_bin, c.precision, standardize=c.standardize_identity
        )
        if self.kind.uses_decay:
            self.delta_encoder = make_encoder(c.encoder, c.d, c.d_d, c.n_bin, c.delta_precision, cap_bins=True)

    def fit_statistics(self, train: list[MaskedSeries], per_series_mean: bool = False, quantizer=None):
        """Derive every data statistic from training series only, then build parameters."""
        if not train:
            raise ConfigurationError("no training series")
        diffs = np.concatenate([np.diff(s.t) for s in train])
        self.delta_scale = float(np.median(diffs)) if diffs.size else 1.0
        observed = np.concatenate([s.observed for s in train])
        self.x_av_global = float(observed.mean())
        self.x_av_table = {}
        if per_series_mean:
            groups: dict[str, list[np.ndarray]] = {}
            for s in train:
                groups.setdefault(s.series_id, []).append(s.observed)
            self.x_av_table = {k: float(np.concatenate(v).mean()) for k, v in groups.items()}
        if self.config.objective == "classification":
            if quantizer is None:
                from rise.data import fit_target_quantizer

                quantizer = fit_target_quantizer(observed, self.config.n_classes)
            self.quantizer = quantizer
        self._make_encoders()
        self.x_encoder.fit(observed)
        if self.delta_encoder is not None:
            deltas = np.concatenate([compute_delta(s.t, s.m, self.delta_scale) for s in train])
            self.delta_encoder.fit(deltas)
        self.build()
        return self

    def build(self):
        """Register all parameters (encoders must already be fitted)."""
        c, store, seed = self.config, self.params, self.config.seed
        if self.x_encoder is None:
            self._make_encoders()
        self.x_encoder.build(store, "enc_x", seed)
        d = self.x_encoder.dim
        if self.delta_encoder is not None:
            self.delta_encoder.build(store, "enc_delta", seed)
            d_enc = self.delta_encoder.dim
            self.gamma_h = self._discount_params("gamma_h", c.d_h, d_enc)
            if self.kind is InstanceKind.GRU_D:
                self.gamma_x = self._discount_params("gamma_x", d, d_enc)
        if self.kind.regresses_replacement:
            self.W_x = store.add("W_x", xavier_uniform(seeded_rng(seed, "W_x"), (d, c.d_h), c.d_h, d))
            self.b_x = store.add("b_x", np.zeros(d))
        d_in = d + (0 if self.kind.indicator is None else 1)
        self.layers = init_params(d_in, c.d_h, c.n_layers, seed, store, prefix="gru")
        n_out = self.n_outputs
        store.add("head.W", xavier_uniform(seeded_rng(seed, "head.W"), (n_out, c.d_h), c.d_h, n_out))
        store.add("head.b", np.zeros(n_out))
        self.built = True
        return self

    def _discount_params(self, name, out, d_enc) -> DiscountParams:
        w = xavier_uniform(seeded_rng(self.config.seed, f"{name}.W"), (out, d_enc), d_enc, out)
        return DiscountParams(self.params.add(f"{name}.W", w), self.params.add(f"{name}.b", np.zeros(out)))

    @property
    def n_outputs(self) -> int:
        if self.config.objective == "regression":
            return 1
        return self.quantizer.n_classes if self.quantizer is not None else self.config.n_classes

    def x_av_for(self, series_id: str) -> float:
        return self.x_av_table.get(series_id, self.x_av_global)

    # -- batching ----------------------------------------------------------

    def prepare(self, series: list[MaskedSeries]) -> SeriesBatch:
        B = len(series)
        N = max(len(s) for s in series)
        x = np.zeros((N, B))
        m = np.zeros((N, B), dtype=bool)
        valid = np.zeros((N, B), dtype=bool)
        delta = np.zeros((N, B))
        x_last = np.zeros((N, B))
        has_last = np.zeros((N, B), dtype=bool)
        x_av = np.zeros(B)
        for b, s in enumerate(series):
            n = len(s)
            av = self.x_av_for(s.series_id)
            obs = s.m == 1
            x_av[b] = av
            x[:, b] = av
            x[:n, b] = np.where(obs, s.x, av)
            m[:n, b] = obs
            valid[:n, b] = True
            delta[:n, b] = compute_delta(s.t, s.m, self.delta_scale)
            last, has = last_observed(s.x, s.m, av)
            x_last[:, b] = av
            x_last[:n, b] = last
            has_last[:n, b] = has
            if n < N:
                # padding continues from the last real step
                delta[n:, b] = delta[n - 1, b]
                has_last[n:, b] = has[-1] or obs[-1]
        return SeriesBatch([s.series_id for s in series], x, m, valid, delta, x_last, has_last, x_av)

    # -- forward -----------------------------------------------------------

    def forward(self, batch: SeriesBatch | list[MaskedSeries] | MaskedSeries, keep_layers: bool = False) -> ForwardResult:
        if isinstance(batch, MaskedSeries):
            batch = [batch]
        if not isinstance(batch, SeriesBatch):
            batch = self.prepare(batch)
        if not self.built:
            raise ContractError("network parameters are not built; call fit_statistics first")
        kind = self.kind
        N, B = batch.n_steps, batch.size
        m_flat = batch.m.reshape(-1)
        enc = self.x_encoder

        e_obs = enc.encode(batch.x.reshape(-1))
        gamma_h = None
        if kind.uses_decay:
            e_delta = self.delta_encoder.encode(batch.delta.reshape(-1))
            gamma_h = discount(self.gamma_h, e_delta)
            gamma_x = discount(self.gamma_x, e_delta) if kind is InstanceKind.GRU_D else None

        x_hat_all = None
        if not kind.regresses_replacement:
            aux = RiseAux(
                x_last=batch.x_last.reshape(-1),
                x_av=np.repeat(batch.x_av[None, :], N, axis=0).reshape(-1),
                has_last=batch.has_last.reshape(-1),
            )
            e_tilde = replacement_input(kind, aux, None, gamma_x if kind is InstanceKind.GRU_D else None, enc)
            e_c = conditional_replace(e_obs, m_flat, e_tilde)
            x_hat_all = transform_input(kind, e_c, m_flat)
            replacements = int(np.sum(~batch.m & batch.valid))
        else:
            aux = RiseAux(batch.x_last, batch.x_av, batch.has_last, self.W_x, self.b_x)
            replacements = 0

        state = zero_state(self.layers, B)
        hidden, inputs, layer_states = [], [], []
        for i in range(N):
            rows = slice(i * B, (i + 1) * B)
            m_i = batch.m[i]
            if x_hat_all is not None:
                x_hat = x_hat_all[rows]
            else:
                if m_i.all():
                    e_c = e_obs[rows]
                else:
                    e_tilde = replacement_input(kind, aux, state.h[0], None, enc)
                    e_c = conditional_replace(e_obs[rows], m_i, e_tilde)
                    replacements += int(np.sum(~m_i & batch.valid[i]))
                x_hat = transform_input(kind, e_c, m_i)
            h_hat = state.h
            if gamma_h is not None:
                g = gamma_h[rows]
                h_hat = [transform_hidden(kind, h, g) for h in state.h]
            state = stack_step(self.layers, x_hat, StackState(h_hat))
            hidden.append(state.h[-1])
            inputs.append(x_hat)
            if keep_layers:
                layer_states.append(list(state.h))
        return ForwardResult(hidden, inputs, replacements, layer_states)

    def head(self, hidden) -> Tensor:
        """Logits (classification) or raw predictions (regression) from top-layer states."""
        return ad.linear(hidden, self.params["head.W"], self.params["head.b"])

    def decode(self, outputs: np.ndarray) -> np.ndarray:
        """Map head outputs (last axis) to values; argmax ties go to the lowest class."""
        if self.config.objective == "regression":
            return outputs[..., 0]
        return self.quantizer.representative(np.argmax(outputs, axis=-1))

    def predict_series(self, series: list[MaskedSeries], batch_size: int = 64) -> list[np.ndarray]:
        """One-step-ahead predictions: entry ``j`` predicts ``x[j]`` from steps ``< j``.

        Entry 0 is NaN. A single causal pass per series yields every entry,
        because the state after step ``j-1`` never sees ``x[j]``.
        """
        W, b = self.params["head.W"].data, self.params["head.b"].data
        out = []
        with ad.no_grad():
            for lo in range(0, len(series), batch_size):
                chunk = series[lo : lo + batch_size]
                res = self.forward(chunk)
                H = np.stack([h.data for h in res.hidden])
                decoded = self.decode(H @ W.T + b)
                for k, s in enumerate(chunk):
                    pred = np.full(len(s), np.nan)
                    pred[1:] = decoded[: len(s) - 1, k]
                    out.append(pred)
        return out

    def predict_next(self, prefix: MaskedSeries) -> float:
        """Value predicted for the step following ``prefix``."""
        with ad.no_grad():
            res = self.forward([prefix])
            return float(self.decode(self.head(res.hidden[-1]).data)[0])


def rise_forward(network: RiseNetwork, series) -> ForwardResult:
    return network.forward(series)
