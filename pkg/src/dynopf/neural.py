"""Minimal dense-network engine: float64 tensors, reverse-mode autodiff,
and first-order optimizers.

Tensors are plain ``numpy.float64`` arrays.  A :class:`GradientTape` records
a Wengert list of :class:`Var` nodes as operations execute; reverse-mode
differentiation walks the list backwards once, so gradient accumulation is
an order-fixed reduction and repeated runs are bitwise deterministic on a
single thread.

The differentiable op set is exactly what the dispatch-proxy and surrogate
training pipelines need: affine maps, tanh/relu/sigmoid, elementwise
arithmetic, sin/cos/sqrt/atan2, smoothed absolute value, hinge, max and
sum/mean reductions, concatenation and column slicing.  Anything heavier
(convolutions, attention, GPU paths) is deliberately out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

Tensor = np.ndarray

__all__ = [
    "Tensor",
    "Var",
    "GradientTape",
    "DenseNet",
    "OptimizerState",
    "forward",
    "backward",
    "step",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_to_dict",
    "checkpoint_from_dict",
]

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu", "identity")


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """One recorded value; ``_parents`` holds (parent, vector-Jacobian) pairs."""

    __slots__ = ("value", "grad", "_parents", "_tape")

    def __init__(self, value, parents=(), tape=None):
        self.value = _as_array(value)
        self.grad = None
        self._parents = parents
        self._tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # operator sugar; non-Var operands are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeError(RuntimeError):
    pass


class GradientTape:
    """Recorded operation graph for one forward evaluation.

    Nodes are appended in execution order, so the list is already
    topologically sorted.  Parameters registered through :meth:`watch` (or
    implicitly by :func:`forward`) collect gradients on :func:`backward`.
    A tape belongs to one evaluation thread; every Var created on it keeps
    a reference back, which is how chained operations find the recorder.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.watched: list[Var] = []
        self._model_params: dict[int, list[Var]] = {}

    def leaf(self, value) -> Var:
        v = Var(value, tape=self)
        self.nodes.append(v)
        return v

    def watch(self, value) -> Var:
        v = self.leaf(value)
        self.watched.append(v)
        return v

    def record(self, value, parents) -> Var:
        v = Var(value, parents, tape=self)
        self.nodes.append(v)
        return v

    def params_of(self, model: "DenseNet") -> list[Var]:
        """Watched parameter leaves for ``model``, created once per tape.

        Repeated forwards of the same model on one tape (an unrolled
        integration, for instance) share these leaves so their gradients
        accumulate.
        """
        key = id(model)
        if key not in self._model_params:
            self._model_params[key] = [self.watch(p) for p in model.parameters()]
        return self._model_params[key]

    def gradients_of(self, model: "DenseNet") -> list[np.ndarray]:
        """Per-parameter gradients for ``model`` after a backward pass."""
        out = []
        for v in self.params_of(model):
            out.append(np.zeros_like(v.value) if v.grad is None else v.grad)
        return out


def _tape_of(*operands) -> GradientTape:
    for x in operands:
        if isinstance(x, Var):
            if x._tape is None:
                raise TapeError("Var was created without a tape")
            return x._tape
    raise TapeError("at least one operand must be a Var")


def _lift(x) -> tuple[np.ndarray, bool]:
    """Value and is-tracked flag for an operand."""
    if isinstance(x, Var):
        return x.value, True
    return _as_array(x), False


def _binary(a, b, out_value, vjp_a, vjp_b) -> Var:
    tape = _tape_of(a, b)
    parents = []
    if isinstance(a, Var):
        parents.append((a, vjp_a))
    if isinstance(b, Var):
        parents.append((b, vjp_b))
    return tape.record(out_value, tuple(parents))


def _unary(a: Var, out_value, vjp) -> Var:
    tape = _tape_of(a)
    return tape.record(out_value, ((a, vjp),))


def add(a, b) -> Var:
    av, _ = _lift(a)
    bv, _ = _lift(b)
    return _binary(a, b, av + bv,
                   lambda g: _unbroadcast(g, av.shape),
                   lambda g: _unbroadcast(g, bv.shape))


def sub(a, b) -> Var:
    av, _ = _lift(a)
    bv, _ = _lift(b)
    return _binary(a, b, av - bv,
                   lambda g: _unbroadcast(g, av.shape),
                   lambda g: _unbroadcast(-g, bv.shape))


def mul(a, b) -> Var:
    av, _ = _lift(a)
    bv, _ = _lift(b)
    return _binary(a, b, av * bv,
                   lambda g: _unbroadcast(g * bv, av.shape),
                   lambda g: _unbroadcast(g * av, bv.shape))


def div(a, b) -> Var:
    av, _ = _lift(a)
    bv, _ = _lift(b)
    return _binary(a, b, av / bv,
                   lambda g: _unbroadcast(g / bv, av.shape),
                   lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape))


def neg(a: Var) -> Var:
    return _unary(a, -a.value, lambda g: -g)


def matmul(a, b) -> Var:
    av, _ = _lift(a)
    bv, _ = _lift(b)
    out = av @ bv
    return _binary(a, b, out,
                   lambda g: g @ bv.T,
                   lambda g: av.T @ g)


def square(a: Var) -> Var:
    return _unary(a, a.value * a.value, lambda g, v=a.value: g * (2.0 * v))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _unary(a, out, lambda g, o=out: g * (0.5 / o))


def sin(a: Var) -> Var:
    return _unary(a, np.sin(a.value), lambda g, v=a.value: g * np.cos(v))


def cos(a: Var) -> Var:
    return _unary(a, np.cos(a.value), lambda g, v=a.value: g * (-np.sin(v)))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _unary(a, out, lambda g, o=out: g * (1.0 - o * o))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _unary(a, out, lambda g, o=out: g * o)


def sigmoid(a: Var) -> Var:
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _unary(a, out, lambda g, o=out: g * (o * (1.0 - o)))


def relu(a: Var) -> Var:
    # subgradient 0 at exactly 0
    mask = a.value > 0
    return _unary(a, np.where(mask, a.value, 0.0), lambda g, m=mask: g * m)


hinge = relu  # max(0, x): inequality-violation measure


def smooth_abs(a: Var, eps: float = 1e-8) -> Var:
    """sqrt(x^2 + eps^2) - eps: differentiable |x| for equality violations."""
    root = np.sqrt(a.value * a.value + eps * eps)
    return _unary(a, root - eps, lambda g, v=a.value, r=root: g * (v / r))


def atan2(y, x) -> Var:
    yv, _ = _lift(y)
    xv, _ = _lift(x)
    denom = xv * xv + yv * yv
    return _binary(y, x, np.arctan2(yv, xv),
                   lambda g: _unbroadcast(g * (xv / denom), yv.shape),
                   lambda g: _unbroadcast(g * (-yv / denom), xv.shape))


def vsum(a: Var, axis=None) -> Var:
    out = a.value.sum(axis=axis)

    def vjp(g, shape=a.value.shape, axis=axis):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _unary(a, out, vjp)


def vmean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / n)


def amax(a: Var, axis: int) -> Var:
    """Maximum along an axis; the gradient routes to the first maximizer."""
    out = a.value.max(axis=axis)
    idx = a.value.argmax(axis=axis)

    def vjp(g, shape=a.value.shape, axis=axis, idx=idx):
        full = np.zeros(shape)
        grid = np.indices(idx.shape)
        pos = list(grid)
        pos.insert(axis if axis >= 0 else axis + len(shape), idx)
        full[tuple(pos)] = g
        return full

    return _unary(a, out, vjp)


def concat(parts: list, axis: int = 1) -> Var:
    values = [(p.value if isinstance(p, Var) else _as_array(p)) for p in parts]
    out = np.concatenate(values, axis=axis)
    tape = _tape_of(*parts)
    parents = []
    start = 0
    for p, v in zip(parts, values):
        width = v.shape[axis]
        if isinstance(p, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(start, start + width)
            parents.append((p, lambda g, sl=tuple(sl): g[sl]))
        start += width
    return tape.record(out, tuple(parents))


def take_cols(a: Var, start: int, stop: int) -> Var:
    out = a.value[:, start:stop]

    def vjp(g, shape=a.value.shape, start=start, stop=stop):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return full

    return _unary(a, out, vjp)


def backward(tape: GradientTape, output_grad=1.0, output: Var | None = None):
    """Reverse-mode sweep over a completed tape.

    Seeds ``output`` (default: the last recorded node) with ``output_grad``
    and returns the gradients of the watched parameters in watch order.
    """
    if not tape.nodes:
        raise TapeError("tape is empty")
    if output is None:
        output = tape.nodes[-1]
    seed = _as_array(output_grad)
    output.grad = np.broadcast_to(seed, output.value.shape).astype(np.float64).copy()
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            pg = vjp(g)
            parent.grad = pg if parent.grad is None else parent.grad + pg
    return [np.zeros_like(w.value) if w.grad is None else w.grad for w in tape.watched]


@dataclass(frozen=True)
class DenseNet:
    """Feedforward network: affine layers with per-layer activations."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} parameter shape mismatch")

    @classmethod
    def init(cls, widths, activations, seed: int) -> "DenseNet":
        """Seeded initialization: Xavier-uniform for tanh/identity, He for relu."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, act in enumerate(activations):
            fan_in, fan_out = widths[i], widths[i + 1]
            if act == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(widths), tuple(activations), tuple(weights), tuple(biases))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "DenseNet":
        ws = tuple(params[0::2])
        bs = tuple(params[1::2])
        return DenseNet(self.widths, self.activations, ws, bs)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _activate(name: str, h):
    if name == "tanh":
        return np.tanh(h) if isinstance(h, np.ndarray) else tanh(h)
    if name == "relu":
        return np.where(h > 0, h, 0.0) if isinstance(h, np.ndarray) else relu(h)
    return h


def forward(model: DenseNet, x, tape: GradientTape | None = None):
    """Evaluate the network on a batch (rows) or a single vector.

    Without a tape this is a plain numpy evaluation returning an array.
    With a tape, ``x`` may be a Var or an array (lifted to a constant) and
    the full computation is recorded against the tape's parameter leaves.
    """
    if tape is None:
        h = _as_array(x)
        for w, b, act in zip(model.weights, model.biases, model.activations):
            h = _activate(act, h @ w + b)
        return h
    params = tape.params_of(model)
    h = x if isinstance(x, Var) else tape.leaf(x)
    squeeze = h.value.ndim == 1
    if squeeze:
        h = tape.record(h.value[None, :], ((h, lambda g: g[0]),))
    for i, act in enumerate(model.activations):
        h = add(matmul(h, params[2 * i]), params[2 * i + 1])
        h = _activate(act, h)
    if squeeze:
        h = tape.record(h.value[0], ((h, lambda g: g[None, :]),))
    return h


@dataclass
class OptimizerState:
    """First-order update rule state (sgd or adam) for one model."""

    method: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list | None = None
    v: list | None = None

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def step(opt: OptimizerState, model: DenseNet, grads: list[np.ndarray]) -> DenseNet:
    """Apply one optimizer update; returns the updated model.

    The optimizer state is advanced in place (step counter and, for adam,
    the bias-corrected first/second moments).
    """
    params = model.parameters()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError("gradient shape mismatch")
    if opt.method == "sgd":
        new = [p - opt.lr * g for p, g in zip(params, grads)]
        return model.with_parameters(new)
    if opt.m is None:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    opt.t += 1
    bc1 = 1.0 - opt.beta1 ** opt.t
    bc2 = 1.0 - opt.beta2 ** opt.t
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[i] / bc1
        v_hat = opt.v[i] / bc2
        new.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
    return model.with_parameters(new)


def checkpoint_to_dict(model: DenseNet, opt: OptimizerState | None = None,
                       seed: int | None = None, epoch: int | None = None,
                       extra: dict | None = None) -> dict:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "widths": list(model.widths),
        "activations": list(model.activations),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "seed": seed,
        "epoch": epoch,
    }
    if opt is not None:
        doc["optimizer"] = {
            "method": opt.method, "lr": opt.lr, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "t": opt.t,
            "m": None if opt.m is None else [a.tolist() for a in opt.m],
            "v": None if opt.v is None else [a.tolist() for a in opt.v],
        }
    if extra:
        doc["extra"] = extra
    return doc


def checkpoint_from_dict(doc: dict):
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    model = DenseNet(
        tuple(doc["widths"]), tuple(doc["activations"]),
        tuple(np.array(w) for w in doc["weights"]),
        tuple(np.array(b) for b in doc["biases"]),
    )
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = OptimizerState(method=o["method"], lr=o["lr"], beta1=o["beta1"],
                             beta2=o["beta2"], eps=o["eps"], t=o["t"],
                             m=None if o["m"] is None else [np.array(a) for a in o["m"]],
                             v=None if o["v"] is None else [np.array(a) for a in o["v"]])
    return model, opt, doc


def save_checkpoint(path, model: DenseNet, **kwargs):
    with open(path, "w") as f:
        json.dump(checkpoint_to_dict(model, **kwargs), f)


def load_checkpoint(path):
    with open(path) as f:
        return checkpoint_from_dict(json.load(f))
