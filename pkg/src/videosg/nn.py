"""Neural network building blocks on top of the tape autodiff engine.

Everything is double precision and CPU-only. Parameters live in a
:class:`ParameterStore` keyed by dotted names so checkpointing and the
optimizer can treat the model as a flat dict of arrays.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat


class ParameterStore:
    """Flat registry of named trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for k, t in self._params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {t.data.shape}")
            t.data = a.copy()
            t.grad = None


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    """Affine map ``x @ W + b`` with Glorot-uniform init."""

    def __init__(self, store: ParameterStore, prefix: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.add(f"{prefix}.w", glorot_uniform(rng, d_in, d_out, (d_in, d_out)))
        self.b = store.add(f"{prefix}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y


def dropout(x: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not train or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(np.float64) / keep
    return x * Tensor(mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps).power(-0.5)
    return centered * inv * gain + bias


def sinusoidal_positions(positions, d_model: int) -> np.ndarray:
    """Sinusoidal position encoding for explicit integer positions.

    Even channels carry ``sin(pos / 10000^(2i/d))``, odd channels the
    matching cosine. Returns ``(len(positions), d_model)``.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = (d_model + 1) // 2
    i = np.arange(half, dtype=np.float64)
    freq = np.power(10000.0, -2.0 * i / d_model)
    angles = pos * freq  # (L, half)
    pe = np.zeros((pos.shape[0], 2 * half))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe[:, :d_model]


class EncoderLayer:
    """Post-norm transformer encoder layer with masked multi-head attention."""

    def __init__(self, store: ParameterStore, prefix: str, d_model: int, num_heads: int,
                 d_ff: int, rate: float, rng: np.random.Generator):
        if d_model % num_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by num_heads {num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.rate = rate
        self.wq = Linear(store, f"{prefix}.attn.q", d_model, d_model, rng)
        self.wk = Linear(store, f"{prefix}.attn.k", d_model, d_model, rng)
        self.wv = Linear(store, f"{prefix}.attn.v", d_model, d_model, rng)
        self.wo = Linear(store, f"{prefix}.attn.out", d_model, d_model, rng)
        self.ff1 = Linear(store, f"{prefix}.ffn.lin1", d_model, d_ff, rng)
        self.ff2 = Linear(store, f"{prefix}.ffn.lin2", d_ff, d_model, rng)
        self.ln1_g = store.add(f"{prefix}.ln1.gain", np.ones(d_model))
        self.ln1_b = store.add(f"{prefix}.ln1.bias", np.zeros(d_model))
        self.ln2_g = store.add(f"{prefix}.ln2.gain", np.ones(d_model))
        self.ln2_b = store.add(f"{prefix}.ln2.bias", np.zeros(d_model))
        self.last_attention: np.ndarray | None = None

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        return x.reshape(batch, length, self.num_heads, self.d_head).transpose((0, 2, 1, 3))

    def __call__(self, x: Tensor, key_mask: np.ndarray, rng: np.random.Generator,
                 train: bool) -> Tensor:
        b, length, _ = x.data.shape
        q = self._split_heads(self.wq(x), b, length)
        k = self._split_heads(self.wk(x), b, length)
        v = self._split_heads(self.wv(x), b, length)
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        # keys at padded positions get a large negative bias before softmax
        bias = np.where(key_mask[:, None, None, :], 0.0, -1e9)
        attn = (scores + Tensor(bias)).softmax(axis=-1)
        self.last_attention = attn.data.copy()
        attn = dropout(attn, self.rate, rng, train)
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape(b, length, self.d_model)
        x = layer_norm(x + dropout(self.wo(ctx), self.rate, rng, train),
                       self.ln1_g, self.ln1_b)
        h = dropout(self.ff1(x).relu(), self.rate, rng, train)
        x = layer_norm(x + dropout(self.ff2(h), self.rate, rng, train),
                       self.ln2_g, self.ln2_b)
        return x


class TransformerEncoder:
    """Stack of encoder layers over padded batches.

    ``mask`` is a boolean ``(B, L)`` array marking real positions; padded
    slots are excluded from attention as keys and should be ignored
    downstream. Each batch row must contain at least one real position.
    """

    def __init__(self, store: ParameterStore, prefix: str, d_model: int, num_heads: int,
                 d_ff: int, num_layers: int, rate: float, rng: np.random.Generator):
        self.layers = [
            EncoderLayer(store, f"{prefix}.layer{i}", d_model, num_heads, d_ff, rate, rng)
            for i in range(num_layers)
        ]

    def __call__(self, x: Tensor, mask: np.ndarray, rng: np.random.Generator,
                 train: bool = False) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.data.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match batch {x.data.shape[:2]}")
        if not mask.any(axis=1).all():
            raise ValueError("every batch row needs at least one unmasked position")
        for layer in self.layers:
            x = layer(x, mask, rng, train)
        return x

    @property
    def last_attention(self) -> list[np.ndarray]:
        return [layer.last_attention for layer in self.layers]


# ---- losses --------------------------------------------------------------

def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Softmax cross entropy with integer targets over the last axis.

    ``logits`` is ``(N, C)``; ``targets`` length ``N``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match logits rows {n}")
    if targets.min() < 0 or targets.max() >= c:
        raise ValueError("target index out of range")
    logp = logits.log_softmax(axis=-1)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), targets] = 1.0
    total = -(logp * Tensor(onehot)).sum()
    if reduction == "mean":
        return total * (1.0 / n)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}")


def multilabel_margin(scores: Tensor, positive: np.ndarray, negative: np.ndarray,
                      reduction: str = "mean") -> Tensor:
    """Pairwise hinge over positive/negative label pairs.

    ``scores`` is ``(N, C)``; ``positive`` and ``negative`` are boolean
    masks of the same shape. Each row contributes
    ``sum_{p in P, q in Q} max(0, 1 - s_p + s_q)``; rows with an empty
    positive or negative set contribute zero. ``reduction`` averages over
    rows ("mean") or leaves the total ("sum").
    """
    positive = np.asarray(positive, dtype=bool)
    negative = np.asarray(negative, dtype=bool)
    if positive.shape != scores.data.shape or negative.shape != scores.data.shape:
        raise ValueError("mask shapes must match scores")
    if (positive & negative).any():
        raise ValueError("a label cannot be both positive and negative")
    n, c = scores.data.shape
    diff = 1.0 - scores.reshape(n, c, 1) + scores.reshape(n, 1, c)
    pair = positive[:, :, None] & negative[:, None, :]
    total = (diff.relu() * Tensor(pair.astype(np.float64))).sum()
    if reduction == "mean":
        return total * (1.0 / n)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}")


# ---- optimizer -----------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay over a :class:`ParameterStore`."""

    def __init__(self, store: ParameterStore, lr: float = 1e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in store.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in store.items()}

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state(self) -> dict:
        out = {"t": self.t}
        for name in self.store.names():
            out[f"m.{name}"] = self.m[name].copy()
            out[f"v.{name}"] = self.v[name].copy()
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for name in self.store.names():
            self.m[name] = np.asarray(state[f"m.{name}"], dtype=np.float64).copy()
            self.v[name] = np.asarray(state[f"v.{name}"], dtype=np.float64).copy()


__all__ = [
    "ParameterStore", "Linear", "EncoderLayer", "TransformerEncoder",
    "glorot_uniform", "dropout", "layer_norm", "sinusoidal_positions",
    "cross_entropy", "multilabel_margin", "AdamW", "concat",
]
