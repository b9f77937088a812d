"""Scalar-value encoders mapping one number to a d-dimensional vector.

Each encoder works on a whole 1-D array of values at once and returns a
``[n, d]`` tensor. Encoders that need data statistics (bin edges, the digit
vocabulary, identity standardization) are fitted on training values before
their parameters are registered with :meth:`build`.
"""
from __future__ import annotations

import math

import numpy as np

from rise import autodiff as ad
from rise.autodiff import ParameterStore, Tensor, xavier_uniform
from rise.cells import GruParams, add_gru_layer, gru_step, seeded_rng
from rise.errors import ConfigurationError

ENCODER_KINDS = ("id", "ffw", "xfmr", "bin", "gru")

LOG_CLAMP = 1e-6
DIGITS = "0123456789"
POINT = "."
MINUS = "−"


# ---------------------------------------------------------------------------
# quantile binning
# ---------------------------------------------------------------------------


def quantile_edges(values, n_bins: int) -> np.ndarray:
    """Edges splitting ``values`` into ``n_bins`` groups of near-equal size.

    Edge k is the ``floor((k+1) * n / n_bins)``-th smallest value, and a value
    equal to an edge belongs to the lower bin, so distinct fitting values
    land ``floor`` or ``ceil`` of ``n / n_bins`` to a bin.
    """
    s = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if n_bins < 2:
        raise ConfigurationError(f"need at least 2 bins, got {n_bins}")
    n_distinct = np.unique(s).size
    if n_distinct < n_bins:
        raise ConfigurationError(f"{n_distinct} distinct values cannot fill {n_bins} bins")
    n = s.size
    positions = (np.arange(1, n_bins) * n) // n_bins - 1
    return s[positions]


def assign_bins(edges: np.ndarray, values) -> np.ndarray:
    """Bin index per value; below the first edge is 0, above the last is ``len(edges)``."""
    return np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="left")


class BinningScheme:
    """Quantile edges plus the ``[d, n_bin]`` embedding matrix."""

    def __init__(self, edges: np.ndarray, embedding: Tensor | None = None):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.embedding = embedding

    @property
    def n_bin(self) -> int:
        return self.edges.size + 1

    def bin(self, values) -> np.ndarray:
        return assign_bins(self.edges, values)


def fit_quantile_bins(values, n_bin: int) -> BinningScheme:
    return BinningScheme(quantile_edges(values, n_bin))


# ---------------------------------------------------------------------------
# digit tokenization
# ---------------------------------------------------------------------------


def render_number(v: float, precision: int) -> str:
    """Canonical text: optional minus sign, no leading zeros, fixed decimals."""
    if not math.isfinite(v):
        raise ValueError(f"cannot tokenize non-finite value {v!r}")
    text = f"{abs(v):.{precision}f}"
    negative = v < 0 and text.strip("0.") != ""
    return (MINUS if negative else "") + text


def tokenize_number(v: float, precision: int = 2) -> list[str]:
    return list(render_number(v, precision))


def parse_tokens(tokens) -> float:
    return float("".join(tokens).replace(MINUS, "-"))


class DigitVocab:
    """Token ids for digits, the decimal point and (optionally) the minus sign."""

    def __init__(self, signed: bool = False):
        self.tokens = list(DIGITS) + [POINT] + ([MINUS] if signed else [])
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, text: str) -> list[int]:
        try:
            return [self._ids[c] for c in text]
        except KeyError:
            raise ValueError(f"{text!r} uses tokens outside the vocabulary {self.tokens}") from None


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


class Encoder:
    kind = "base"
    dim = 1

    def fit(self, values) -> "Encoder":
        return self

    def build(self, store: ParameterStore, prefix: str, seed: int) -> "Encoder":
        return self

    def encode(self, values) -> Tensor:
        raise NotImplementedError

    def __call__(self, values) -> Tensor:
        return self.encode(values)

    def state(self) -> dict:
        """JSON-serializable fitted statistics (parameters live in the store)."""
        return {}

    def load_state(self, state: dict) -> None:
        pass


class IdentityEncoder(Encoder):
    """Returns ``[(v - shift) / scale]``; unfitted it is the plain identity.

    With ``standardize=True`` the shift and scale are fitted to the training
    mean and standard deviation, keeping raw physical values (e.g. 40-400
    mg/dL) out of the saturated range of the first GRU layer.
    """

    kind = "id"
    dim = 1

    def __init__(self, standardize: bool = False):
        self.standardize = standardize
        self.shift = 0.0
        self.scale = 1.0

    def fit(self, values):
        if self.standardize:
            v = np.asarray(values, dtype=np.float64)
            self.shift = float(v.mean())
            self.scale = float(v.std()) or 1.0
        return self

    def encode(self, values) -> Tensor:
        v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        if self.shift == 0.0 and self.scale == 1.0:
            return Tensor(v.copy())
        return Tensor((v - self.shift) / self.scale)

    def state(self):
        return {"shift": self.shift, "scale": self.scale}

    def load_state(self, state):
        self.shift, self.scale = state["shift"], state["scale"]


class FeedforwardEncoder(Encoder):
    """``sigmoid(u * w + b)`` on the log-normalized value ``u``.

    ``u = (log(max(v, 1e-6)) - shift) / scale``. Unfitted, shift is 0 and
    scale 1, giving ``sigmoid(log(v) * w + b)``. :meth:`fit` sets them to the
    mean and standard deviation of the training log-values, an affine
    reparametrization of the same function family that keeps narrow value
    ranges (log 60 to log 140 spans 0.8) from collapsing to a constant code.
    """

    kind = "ffw"

    def __init__(self, d: int):
        self.dim = d
        self.w: Tensor | None = None
        self.b: Tensor | None = None
        self.shift = 0.0
        self.scale = 1.0

    def fit(self, values):
        v = np.asarray(values, dtype=np.float64)
        v = v[v > LOG_CLAMP] if np.any(v > LOG_CLAMP) else np.maximum(v, LOG_CLAMP)
        logs = np.log(v)
        self.shift = float(logs.mean())
        self.scale = float(logs.std()) or 1.0
        return self

    def state(self):
        return {"shift": self.shift, "scale": self.scale}

    def load_state(self, state):
        self.shift, self.scale = state["shift"], state["scale"]

    def build(self, store, prefix, seed):
        self.w = store.add(f"{prefix}.w", xavier_uniform(seeded_rng(seed, f"{prefix}.w"), (self.dim,), 1, self.dim))
        self.b = store.add(f"{prefix}.b", np.zeros(self.dim))
        return self

    def encode(self, values) -> Tensor:
        logv = np.log(np.maximum(np.asarray(values, dtype=np.float64), LOG_CLAMP)).reshape(-1, 1)
        if self.shift != 0.0 or self.scale != 1.0:
            logv = (logv - self.shift) / self.scale
        pre = ad.matmul(Tensor(logv), ad.reshape(self.w, (1, self.dim)))
        return ad.sigmoid(ad.add_bias(pre, self.b))


def sinusoid_frequencies(d: int) -> np.ndarray:
    """Frequencies whose wavelengths run geometrically from 2*pi towards 10000*2*pi.

    Slots 2j (sine) and 2j+1 (cosine) share frequency ``10000 ** (-2j / d)``.
    """
    j = np.arange(d) // 2
    return 1.0 / np.power(10000.0, 2.0 * j / d)


class SinusoidalEncoder(Encoder):
    """``sin(w_k v)`` in even slots and ``cos(w_k v)`` in odd slots; ``w`` is trained."""

    kind = "xfmr"

    def __init__(self, d: int):
        if d < 2 or d % 2:
            raise ConfigurationError(f"sinusoidal encoder needs an even d, got {d}")
        self.dim = d
        self.w: Tensor | None = None
        self._even = np.arange(d) % 2 == 0

    def build(self, store, prefix, seed):
        self.w = store.add(f"{prefix}.w", sinusoid_frequencies(self.dim))
        return self

    def encode(self, values) -> Tensor:
        v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        phase = ad.matmul(Tensor(v), ad.reshape(self.w, (1, self.dim)))
        return ad.where(self._even, ad.sin(phase), ad.cos(phase))


class BinningEncoder(Encoder):
    """Column of ``W_bin`` picked by the quantile bin of ``v``."""

    kind = "bin"

    def __init__(self, d: int, n_bin: int, cap_to_distinct: bool = False):
        self.dim = d
        self.n_bin = n_bin
        self.cap_to_distinct = cap_to_distinct
        self.scheme: BinningScheme | None = None

    def fit(self, values):
        values = np.asarray(values, dtype=np.float64)
        n_bin = self.n_bin
        if self.cap_to_distinct:
            n_bin = max(2, min(n_bin, np.unique(values).size))
        self.scheme = fit_quantile_bins(values, n_bin)
        return self

    def build(self, store, prefix, seed):
        n = self.scheme.n_bin
        rng = seeded_rng(seed, f"{prefix}.W_bin")
        self.scheme.embedding = store.add(f"{prefix}.W_bin", xavier_uniform(rng, (self.dim, n), n, self.dim))
        return self

    def encode(self, values) -> Tensor:
        idx = self.scheme.bin(np.asarray(values).reshape(-1))
        return ad.transpose(ad.take(self.scheme.embedding, idx, axis=1))

    def state(self):
        return {"edges": self.scheme.edges.tolist()}

    def load_state(self, state):
        self.scheme = BinningScheme(np.asarray(state["edges"]))
        self.n_bin = self.scheme.n_bin


class DigitGruEncoder(Encoder):
    """Embeds the digit tokens of ``v`` and returns the last hidden state of a GRU.

    Values are rendered with a fixed number of decimals; values that render
    identically share one encoding, and only distinct renderings are pushed
    through the GRU. Shorter token sequences are left-padded and the padded
    steps leave the hidden state untouched, so each value sees exactly its own
    tokens starting from the zero state.
    """

    kind = "gru"

    def __init__(self, d: int, d_d: int, precision: int = 2):
        self.dim = d
        self.d_d = d_d
        self.precision = precision
        self.vocab = DigitVocab(signed=False)
        self.embedding: Tensor | None = None
        self.gru: GruParams | None = None

    def fit(self, values):
        self.vocab = DigitVocab(signed=bool(np.any(np.asarray(values) < 0)))
        return self

    def build(self, store, prefix, seed):
        v = len(self.vocab)
        rng = seeded_rng(seed, f"{prefix}.embedding")
        self.embedding = store.add(f"{prefix}.embedding", xavier_uniform(rng, (self.d_d, v), v, self.d_d))
        self.gru = add_gru_layer(store, f"{prefix}.gru", self.d_d, self.dim, seed)
        return self

    def token_matrix(self, values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Left-padded token ids, activity mask, and the map back to ``values``."""
        texts = [render_number(float(v), self.precision) for v in np.asarray(values).reshape(-1)]
        uniq, inverse = np.unique(np.asarray(texts, dtype=object), return_inverse=True)
        width = max(len(t) for t in uniq)
        ids = np.zeros((uniq.size, width), dtype=np.intp)
        active = np.zeros((uniq.size, width), dtype=bool)
        for row, text in enumerate(uniq):
            ids[row, width - len(text) :] = self.vocab.ids(text)
            active[row, width - len(text) :] = True
        return ids, active, inverse.reshape(-1)

    def encode(self, values) -> Tensor:
        ids, active, inverse = self.token_matrix(values)
        h = Tensor(np.zeros((ids.shape[0], self.dim)))
        for step in range(ids.shape[1]):
            emb = ad.transpose(ad.take(self.embedding, ids[:, step], axis=1))
            stepped = gru_step(self.gru, emb, h)
            h = stepped if active[:, step].all() else ad.where(active[:, step, None], stepped, h)
        return ad.take(h, inverse, axis=0)

    def state(self):
        return {"signed": len(self.vocab) == 12}

    def load_state(self, state):
        self.vocab = DigitVocab(signed=state["signed"])


def make_encoder(
    kind: str,
    d: int,
    d_d: int = 64,
    n_bin: int = 50,
    precision: int = 2,
    *,
    standardize: bool = False,
    cap_bins: bool = False,
) -> Encoder:
    """Build an unfitted encoder of the given kind (``id``, ``ffw``, ``xfmr``, ``bin`` or ``gru``)."""
    if d < 1:
        raise ConfigurationError(f"encoder dimension must be >= 1, got {d}")
    if kind == "id":
        return IdentityEncoder(standardize=standardize)
    if kind == "ffw":
        return FeedforwardEncoder(d)
    if kind == "xfmr":
        return SinusoidalEncoder(d)
    if kind == "bin":
        if n_bin < 2:
            raise ConfigurationError(f"n_bin must be >= 2, got {n_bin}")
        return BinningEncoder(d, n_bin, cap_to_distinct=cap_bins)
    if kind == "gru":
        return DigitGruEncoder(d, d_d, precision)
    raise ConfigurationError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")


def encode(encoder: Encoder, v) -> Tensor:
    """Encode a single value (or array) and return a [d] vector for scalars."""
    scalar = np.ndim(v) == 0
    out = encoder.encode(np.atleast_1d(v))
    return ad.reshape(out, (encoder.dim,)) if scalar else out
