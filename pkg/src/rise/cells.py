"""GRU cell and layer stack used as the recurrent backbone.

Gate convention (Cho et al.; reset applied before the recurrent product)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    n  = tanh(W_n x + U_n (r * h) + b_n)
    h' = z * h + (1 - z) * n

Weights of the three gates are stored stacked in the order (z, r, n), so the
input weights of one layer form a single ``[3*d_h, d_in]`` array whose row
blocks are the per-gate matrices.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from rise.autodiff import ParameterStore, Tensor, _accumulate, _node, as_tensor, xavier_uniform
from rise.errors import DimensionError

GATES = ("z", "r", "n")


@dataclass
class GruParams:
    """Parameters of one GRU layer, registered in a :class:`ParameterStore`."""

    W: Tensor  # [3*d_h, d_in]
    U: Tensor  # [3*d_h, d_h]
    b: Tensor  # [3*d_h]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_h(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views of ``(W, U, b)`` for gate ``z``, ``r`` or ``n``."""
        k = GATES.index(name)
        sl = slice(k * self.d_h, (k + 1) * self.d_h)
        return self.W.data[sl], self.U.data[sl], self.b.data[sl]


@dataclass
class StackState:
    h: list[Tensor]


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by ``(seed, name)`` so a parameter's init ignores creation order."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def add_gru_layer(store: ParameterStore, prefix: str, d_in: int, d_h: int, seed: int) -> GruParams:
    if d_in < 1 or d_h < 1:
        raise DimensionError(f"GRU dimensions must be positive, got d_in={d_in}, d_h={d_h}")
    W = np.concatenate(
        [xavier_uniform(seeded_rng(seed, f"{prefix}.W_{g}"), (d_h, d_in), d_in, d_h) for g in GATES]
    )
    U = np.concatenate(
        [xavier_uniform(seeded_rng(seed, f"{prefix}.U_{g}"), (d_h, d_h), d_h, d_h) for g in GATES]
    )
    return GruParams(
        W=store.add(f"{prefix}.W", W),
        U=store.add(f"{prefix}.U", U),
        b=store.add(f"{prefix}.b", np.zeros(3 * d_h)),
    )


def init_params(
    d_in: int, d_h: int, n_layers: int, rng_seed: int, store: ParameterStore | None = None, prefix: str = "gru"
) -> list[GruParams]:
    """Xavier-uniform weights and zero biases for an ``n_layers`` stack."""
    if n_layers < 1:
        raise DimensionError(f"need at least one layer, got {n_layers}")
    store = ParameterStore() if store is None else store
    layers = []
    for k in range(n_layers):
        layers.append(add_gru_layer(store, f"{prefix}.{k}", d_in if k == 0 else d_h, d_h, rng_seed))
    return layers


def gru_step(params: GruParams, x, h_prev) -> Tensor:
    """One GRU update for ``x`` of shape [d_in] or [batch, d_in]."""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    d_h = params.d_h
    if x.shape[-1] != params.d_in or h_prev.shape[-1] != d_h or x.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(
            f"gru_step: input {x.shape} / state {h_prev.shape} do not fit d_in={params.d_in}, d_h={d_h}"
        )
    W, U, b = params.W, params.U, params.b
    xs = x.data.reshape(-1, params.d_in)
    hs = h_prev.data.reshape(-1, d_h)

    gx = xs @ W.data.T + b.data
    hu = hs @ U.data[: 2 * d_h].T
    z = expit(gx[:, :d_h] + hu[:, :d_h])
    r = expit(gx[:, d_h : 2 * d_h] + hu[:, d_h:])
    rh = r * hs
    n = np.tanh(gx[:, 2 * d_h :] + rh @ U.data[2 * d_h :].T)
    out = z * hs + (1.0 - z) * n

    def backward(g):
        g = g.reshape(-1, d_h)
        da_n = g * (1.0 - z) * (1.0 - n * n)
        d_rh = da_n @ U.data[2 * d_h :]
        da_z = g * (hs - n) * z * (1.0 - z)
        da_r = d_rh * hs * r * (1.0 - r)
        dgx = np.concatenate([da_z, da_r, da_n], axis=1)
        if h_prev.requires_grad:
            dh = g * z + d_rh * r + dgx[:, : 2 * d_h] @ U.data[: 2 * d_h]
            _accumulate(h_prev, dh.reshape(h_prev.shape))
        if x.requires_grad:
            _accumulate(x, (dgx @ W.data).reshape(x.shape))
        if W.requires_grad:
            _accumulate(W, dgx.T @ xs)
        if U.requires_grad:
            dU = np.empty_like(U.data)
            dU[: 2 * d_h] = dgx[:, : 2 * d_h].T @ hs
            dU[2 * d_h :] = da_n.T @ rh
            _accumulate(U, dU)
        if b.requires_grad:
            _accumulate(b, dgx.sum(axis=0))

    return _node(out.reshape(h_prev.shape), (x, h_prev, W, U, b), backward, "gru_step")


def zero_state(layers: list[GruParams], batch: int | None = None) -> StackState:
    shape = lambda d: (d,) if batch is None else (batch, d)  # noqa: E731
    return StackState([Tensor(np.zeros(shape(p.d_h))) for p in layers])


def stack_step(layers: list[GruParams], x, state: StackState) -> StackState:
    """Layer 1 reads ``x``; layer k reads layer k-1's fresh hidden state."""
    if not layers:
        raise DimensionError("stack_step needs at least one layer")
    if len(state.h) != len(layers):
        raise DimensionError(f"state has {len(state.h)} layers, stack has {len(layers)}")
    new = []
    inp = x
    for params, h in zip(layers, state.h):
        inp = gru_step(params, inp, h)
        new.append(inp)
    return StackState(new)
