"""Masked next-value training: loss assembly, Adam, L2 and checkpoint selection."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rise import autodiff as ad
from rise.autodiff import ParameterStore, Tensor
from rise.core import MaskedSeries, RiseConfig, RiseNetwork, SeriesBatch
from rise.errors import ConfigurationError, DivergenceError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rise-checkpoint/1"


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 1
    clip_norm: float = 5.0
    seed: int = 0
    min_prior: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.l2 < 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ConfigurationError(f"invalid training configuration {self}")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ParameterStore, lr: float) -> None:
    """Bias-corrected Adam update in place; parameters without a gradient see a zero one."""
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def l2_penalty(params: ParameterStore, lam: float) -> Tensor:
    if lam == 0:
        return Tensor(0.0)
    terms = [ad.sum(ad.mul(p, p)) for p in params.values()]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, lam)


def step_loss(network: RiseNetwork, series, quantizer=None) -> Tensor:
    """Summed next-value loss, counted only where the next value is observed.

    ``series`` may be one series, a list, or a prepared batch; batch losses
    are summed over series.
    """
    if isinstance(series, MaskedSeries):
        series = [series]
    batch = series if isinstance(series, SeriesBatch) else network.prepare(series)
    if batch.n_steps < 2:
        return Tensor(0.0)
    weights = (batch.m[1:] & batch.valid[1:]).astype(np.float64).reshape(-1)
    if not weights.any():
        return Tensor(0.0)
    res = network.forward(batch)
    out = network.head(ad.concat(res.hidden[:-1], axis=0))
    targets = batch.x[1:].reshape(-1)
    if network.config.objective == "regression":
        return ad.squared_error(ad.reshape(out, (-1,)), targets, weights)
    quantizer = quantizer or network.quantizer
    return ad.softmax_cross_entropy(out, quantizer.classify(targets), weights)


@dataclass
class CheckpointSlot:
    epoch: int
    value: float
    params: dict[str, np.ndarray] = field(repr=False)


@dataclass
class Checkpoint:
    """Best-validated parameters by validation MdAPE and by validation MAPE."""

    best_mdape: CheckpointSlot
    best_mape: CheckpointSlot

    def offer(self, epoch: int, mdape: float, mape: float, params: ParameterStore) -> None:
        if _improves(mdape, self.best_mdape.value):
            self.best_mdape = CheckpointSlot(epoch, mdape, params.snapshot())
        if _improves(mape, self.best_mape.value):
            self.best_mape = CheckpointSlot(epoch, mape, params.snapshot())


def _improves(new: float, old: float) -> bool:
    return math.isfinite(new) and (not math.isfinite(old) or new < old)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mdape: float
    val_mape: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss!r}\t{self.val_mdape!r}\t{self.val_mape!r}"


def fit_network(
    network: RiseNetwork,
    train: list[MaskedSeries],
    validation: list[MaskedSeries],
    config: TrainConfig,
    on_epoch=None,
) -> tuple[Checkpoint, list[EpochLog]]:
    """Train ``network`` in place and return both best-validated snapshots and the epoch log.

    Each epoch shuffles the training series with a seeded generator, takes one
    Adam step per mini-batch of ``config.batch_size`` series on the mean
    per-series loss plus the L2 term, then scores the validation series.
    """
    from rise.evaluation import evaluate

    if not train or not validation:
        raise ConfigurationError("training needs nonempty train and validation splits")
    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    params = network.params

    initial = evaluate(network, validation, min_prior=config.min_prior)
    snap = params.snapshot()
    ckpt = Checkpoint(CheckpointSlot(0, initial.mdape, snap), CheckpointSlot(0, initial.mape, snap))
    log: list[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            chunk = [train[i] for i in order[lo : lo + config.batch_size]]
            loss = step_loss(network, chunk)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, [s.series_id for s in chunk], value)
            total += value
            objective = ad.add(ad.mul(loss, 1.0 / len(chunk)), l2_penalty(params, config.l2))
            if not objective.requires_grad:
                continue
            params.zero_grad()
            ad.backward(objective)
            clip_grad_norm(params, config.clip_norm)
            adam_step(adam, params, config.lr)
        report = evaluate(network, validation, min_prior=config.min_prior)
        ckpt.offer(epoch, report.mdape, report.mape, params)
        entry = EpochLog(epoch, total / len(train), report.mdape, report.mape)
        log.append(entry)
        logger.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    return ckpt, log


def fit(config: TrainConfig, corpus, rise_config: RiseConfig, quantizer=None):
    """Fit statistics on the corpus' train split, train, and return ``(network, checkpoint, log)``."""
    train, validation = corpus.subset("train"), corpus.subset("validation")
    network = RiseNetwork(rise_config)
    network.fit_statistics(train, per_series_mean=per_series_policy(corpus), quantizer=quantizer)
    ckpt, log = fit_network(network, train, validation, config)
    return network, ckpt, log


def per_series_policy(corpus) -> bool:
    return bool(corpus.policy) and corpus.policy.startswith("time")


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------


def network_state(network: RiseNetwork) -> dict:
    return {
        "config": asdict(network.config),
        "delta_scale": network.delta_scale,
        "x_av_global": network.x_av_global,
        "x_av_table": network.x_av_table,
        "quantizer": network.quantizer.state() if network.quantizer is not None else None,
        "x_encoder": network.x_encoder.state(),
        "delta_encoder": network.delta_encoder.state() if network.delta_encoder is not None else None,
    }


def network_from_state(state: dict) -> RiseNetwork:
    from rise.data import TargetQuantizer

    network = RiseNetwork(RiseConfig(**state["config"]))
    network.delta_scale = state["delta_scale"]
    network.x_av_global = state["x_av_global"]
    network.x_av_table = dict(state["x_av_table"])
    if state["quantizer"] is not None:
        network.quantizer = TargetQuantizer.from_state(state["quantizer"])
    network._make_encoders()
    network.x_encoder.load_state(state["x_encoder"])
    if network.delta_encoder is not None:
        network.delta_encoder.load_state(state["delta_encoder"])
    return network.build()


def save_checkpoint(path, network: RiseNetwork, ckpt: Checkpoint, extra: dict | None = None) -> None:
    """Write an ``.npz`` archive: a JSON ``meta`` entry plus ``<slot>/<param>`` float64 arrays."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "network": network_state(network),
        "slots": {
            "best_mdape": {"epoch": ckpt.best_mdape.epoch, "value": ckpt.best_mdape.value},
            "best_mape": {"epoch": ckpt.best_mape.epoch, "value": ckpt.best_mape.value},
        },
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for slot in ("best_mdape", "best_mape"):
        for name, value in getattr(ckpt, slot).params.items():
            arrays[f"{slot}/{name}"] = value
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[RiseNetwork, Checkpoint, dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        slots = {}
        for slot in ("best_mdape", "best_mape"):
            params = {k.split("/", 1)[1]: archive[k].copy() for k in archive.files if k.startswith(slot + "/")}
            info = meta["slots"][slot]
            slots[slot] = CheckpointSlot(info["epoch"], info["value"], params)
    network = network_from_state(meta["network"])
    network.params.load(slots["best_mdape"].params)
    return network, Checkpoint(slots["best_mdape"], slots["best_mape"]), meta.get("extra", {})
