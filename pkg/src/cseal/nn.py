"""Minimal float64 neural kit: dense and LSTM layers, embedding lookup,
masked softmax, binary cross entropy, dropout, Xavier init, gradient
clipping, and SGD/Adam updates.

Reverse-mode gradients are hand-written per operation and checked against
central finite differences in the test suite.  Everything is numpy; there is
no GPU path and no general autodiff beyond the operations defined here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7
_EXP_CLIP = 500.0  # exp(500) is finite in float64; sigmoid saturates long before


class NumericError(ArithmeticError):
    """A forward or update step produced NaN/Inf."""


class Tensor:
    """One node of the computation tape: a float64 array plus backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def sum(self) -> "Tensor":
        src = self

        def bw(g):
            _acc(src, np.broadcast_to(g, src.data.shape))

        return _make(self.data.sum(), (self,), bw)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)

    def backward(self) -> None:
        """Backpropagate from a scalar root through the tape."""
        if self.data.shape != ():
            raise ValueError("backward() starts from a scalar tensor")
        order: list[Tensor] = []
        seen = {id(self)}
        stack: list[tuple[Tensor, object]] = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for p in parents:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    pushed = True
                    break
            if not pushed:
                order.append(node)
                stack.pop()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            _acc(a, g)
            _acc(b, g)

        return _make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            _acc(a, g)
            _acc(b, -g)

        return _make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return _wrap(other) - self

    def __neg__(self):
        src = self

        def bw(g):
            _acc(src, -g)

        return _make(-self.data, (self,), bw)

    def __mul__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            _acc(a, g * b.data)
            _acc(b, g * a.data)

        return _make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __matmul__(self, other):
        a, b = self, _wrap(other)
        if b.data.ndim != 2:
            raise ValueError("matmul right operand must be 2-D")
        out = a.data @ b.data

        def bw(g):
            if a.data.ndim == 1:
                _acc(a, b.data @ g)
                _acc(b, np.outer(a.data, g))
            else:
                _acc(a, g @ b.data.T)
                _acc(b, a.data.T @ g)

        return _make(out, (a, b), bw)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _acc(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- activations and layers ------------------------------------------------


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    z = np.clip(x, -_EXP_CLIP, _EXP_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_np(x.data)

    def bw(g):
        _acc(x, g * s * (1.0 - s))

    return _make(s, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(g):
        _acc(x, g * (1.0 - t * t))

    return _make(t, (x,), bw)


def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "identity") -> Tensor:
    """activation(x @ w + b) for activation in {identity, sigmoid, tanh}."""
    z = x @ w + b
    if activation == "identity":
        return z
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "tanh":
        return tanh(z)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class LstmParams:
    """Gate weights of one LSTM cell (input, forget, output, candidate)."""

    w_xi: Tensor
    w_hi: Tensor
    b_i: Tensor
    w_xf: Tensor
    w_hf: Tensor
    b_f: Tensor
    w_xo: Tensor
    w_ho: Tensor
    b_o: Tensor
    w_xc: Tensor
    w_hc: Tensor
    b_c: Tensor

    @classmethod
    def create(cls, store: "ParamStore", prefix: str, input_dim: int, hidden_dim: int,
               rng: np.random.Generator) -> "LstmParams":
        tensors = {}
        for gate in ("i", "f", "o", "c"):
            tensors[f"w_x{gate}"] = store.add(f"{prefix}w_x{gate}", xavier_init(input_dim, hidden_dim, rng))
            tensors[f"w_h{gate}"] = store.add(f"{prefix}w_h{gate}", xavier_init(hidden_dim, hidden_dim, rng))
            tensors[f"b_{gate}"] = store.add(f"{prefix}b_{gate}", np.zeros(hidden_dim))
        return cls(**tensors)


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step: sigmoid input/forget/output gates, tanh candidate."""
    i = sigmoid(x_t @ p.w_xi + h_prev @ p.w_hi + p.b_i)
    f = sigmoid(x_t @ p.w_xf + h_prev @ p.w_hf + p.b_f)
    o = sigmoid(x_t @ p.w_xo + h_prev @ p.w_ho + p.b_o)
    g = tanh(x_t @ p.w_xc + h_prev @ p.w_hc + p.b_c)
    c_t = f * c_prev + i * g
    h_t = o * tanh(c_t)
    return h_t, c_t


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Row(s) of the table; gradient accumulates only on the looked-up rows."""
    idx = np.asarray(index)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.data.shape[0]})")
    out = table.data[idx]

    def bw(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(out, (table,), bw)


def select_columns(x: Tensor, cols) -> Tensor:
    """x[b, cols[b]] for each row b of a 2-D tensor."""
    cols = np.asarray(cols)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, cols]

    def bw(g):
        gm = np.zeros_like(x.data)
        gm[rows, cols] = g
        _acc(x, gm)

    return _make(out, (x,), bw)


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    out = x.data[index]

    def bw(g):
        gi = np.zeros_like(x.data)
        gi[index] = g
        _acc(x, gi)

    return _make(out, (x,), bw)


def _mask_indices(mask, width: int) -> np.ndarray:
    idx = np.asarray(sorted({int(i) for i in mask}), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("mask must be non-empty")
    if idx[0] < 0 or idx[-1] >= width:
        raise IndexError("mask index out of range")
    return idx


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax restricted to `mask`; exact zeros everywhere else."""
    idx = _mask_indices(mask, logits.data.shape[0])
    z = logits.data[idx]
    e = np.exp(z - z.max())
    p = e / e.sum()
    out = np.zeros_like(logits.data)
    out[idx] = p

    def bw(g):
        gm = g[idx]
        gl = np.zeros_like(logits.data)
        gl[idx] = p * (gm - float(gm @ p))
        _acc(logits, gl)

    return _make(out, (logits,), bw)


def masked_log_prob(logits: Tensor, mask, action: int) -> Tensor:
    """log softmax(logits | mask)[action], computed with the stable log-sum-exp."""
    idx = _mask_indices(mask, logits.data.shape[0])
    if action not in idx:
        raise ValueError(f"action {action} not in mask")
    z = logits.data[idx]
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)

    def bw(g):
        gl = np.zeros_like(logits.data)
        gl[idx] = -g * p
        gl[action] += g
        _acc(logits, gl)

    return _make(np.float64(logits.data[action] - lse), (logits,), bw)


def masked_entropy(logits: Tensor, mask) -> Tensor:
    """Shannon entropy of softmax(logits | mask)."""
    idx = _mask_indices(mask, logits.data.shape[0])
    z = logits.data[idx]
    e = np.exp(z - z.max())
    p = e / e.sum()
    logp = np.log(np.maximum(p, 1e-300))
    h = -float(p @ logp)

    def bw(g):
        gl = np.zeros_like(logits.data)
        gl[idx] = -g * p * (logp + h)
        _acc(logits, gl)

    return _make(np.float64(h), (logits,), bw)


def bce_loss(pred: Tensor, label) -> Tensor:
    """Elementwise -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]."""
    y = np.asarray(label, dtype=np.float64)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))

    def bw(g):
        _acc(pred, g * (p - y) / (p * (1.0 - p)))

    return _make(out, (pred,), bw)


def dropout(x: Tensor, p_drop: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) in train mode, identity in eval."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError("p_drop must be in [0, 1)")
    if mode == "eval" or p_drop == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    keep = (rng.random(x.data.shape) >= p_drop) / (1.0 - p_drop)
    return x * Tensor(keep)


def xavier_init(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform in [-c, c] with c = sqrt(3 / (n_in + n_out))."""
    if n_in < 1 or n_out < 1:
        raise ValueError("fan sizes must be >= 1")
    c = np.sqrt(3.0 / (n_in + n_out))
    return rng.uniform(-c, c, size=(n_in, n_out))


# -- parameters, clipping, optimizers ---------------------------------------


class ParamStore:
    """Named trainable tensors with persistent gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        if any(ch.isspace() for ch in name):
            raise ValueError("parameter names must not contain whitespace")
        t = Tensor(values, requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return float(np.sqrt(total))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            raise ValueError("state dict names do not match store")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k!r}")
            t.data = arr.copy()

    # checkpoint container: text manifest then little-endian float64 payload
    def save(self, path, header: dict[str, str] | None = None) -> None:
        with open(path, "wb") as f:
            f.write(b"NTCK1\n")
            for k, v in (header or {}).items():
                f.write(f"# {k}={v}\n".encode("utf-8"))
            for name, t in self._params.items():
                dims = " ".join(str(d) for d in t.data.shape)
                f.write(f"{name} {dims}".rstrip().encode("utf-8") + b"\n")
            f.write(b"end\n")
            for t in self._params.values():
                f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["ParamStore", dict[str, str]]:
        with open(path, "rb") as f:
            blob = f.read()
        head, sep, payload = blob.partition(b"\nend\n")
        if not sep:
            raise ValueError(f"{path}: not a checkpoint file")
        lines = head.decode("utf-8").split("\n")
        if lines[0] != "NTCK1":
            raise ValueError(f"{path}: bad checkpoint magic")
        header: dict[str, str] = {}
        store = cls()
        offset = 0
        specs: list[tuple[str, tuple[int, ...]]] = []
        for line in lines[1:]:
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                header[key] = value
                continue
            parts = line.split()
            specs.append((parts[0], tuple(int(d) for d in parts[1:])))
        for name, shape in specs:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            store.add(name, arr.reshape(shape).astype(np.float64))
        if offset != len(payload):
            raise ValueError(f"{path}: payload size mismatch")
        return store, header


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = store.grad_norm()
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for t in store.tensors():
        t.grad *= scale
    return scale


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(store: ParamStore, opt: OptimizerState) -> None:
    """Apply one update from the accumulated gradients, then zero them."""
    opt.step_count += 1
    for name, t in store.items():
        g = t.grad
        if opt.algorithm == "sgd":
            t.data -= opt.lr * g
        elif opt.algorithm == "adam":
            m = opt.m.setdefault(name, np.zeros_like(t.data))
            v = opt.v.setdefault(name, np.zeros_like(t.data))
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g
            v *= opt.beta2
            v += (1.0 - opt.beta2) * g * g
            m_hat = m / (1.0 - opt.beta1 ** opt.step_count)
            v_hat = v / (1.0 - opt.beta2 ** opt.step_count)
            t.data -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        else:
            raise ValueError(f"unknown optimizer {opt.algorithm!r}")
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"parameter {name!r} became non-finite")
    store.zero_grad()
