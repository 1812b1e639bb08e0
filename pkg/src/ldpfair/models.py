"""Score functions, losses and weighted empirical risk minimization.

Two hypothesis classes are provided: :class:`LinearModel` and a ReLU
:class:`FeedForwardNet`.  Both carry the feature (and, for regression, target)
standardization they were trained with, so ``predict`` takes raw features and
returns predictions on the original outcome scale.

:func:`train_weighted` minimizes ``sum_i sum_k W[i, k] L(f_k(x_i), y_i)``.
Weights may be negative, which is what the privatized-attribute correction
produces.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

SQUARED_ERROR = "squared_error"
BINARY_CROSS_ENTROPY = "binary_cross_entropy"
LOSS_KINDS = (SQUARED_ERROR, BINARY_CROSS_ENTROPY)
_ALIASES = {"mse": SQUARED_ERROR, "bce": BINARY_CROSS_ENTROPY, "cross_entropy": BINARY_CROSS_ENTROPY}
LINKS = ("identity", "sigmoid")

PROB_CLIP = 1e-12
DIVERGENCE_LIMIT = 1e12


class TrainingDiverged(RuntimeError):
    pass


def loss_kind(name: str) -> str:
    kind = _ALIASES.get(name, name)
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {name!r}")
    return kind


def default_loss(task: str) -> str:
    return BINARY_CROSS_ENTROPY if task == "classification" else SQUARED_ERROR


def default_link(kind: str) -> str:
    return "sigmoid" if loss_kind(kind) == BINARY_CROSS_ENTROPY else "identity"


def loss(kind: str, prediction, target):
    """Pointwise loss; works on scalars and arrays alike."""
    kind = loss_kind(kind)
    p = np.asarray(prediction, dtype=float)
    t = np.asarray(target, dtype=float)
    if kind == SQUARED_ERROR:
        out = (p - t) ** 2
    else:
        if np.any((t != 0) & (t != 1)):
            raise ValueError("binary cross-entropy needs 0/1 targets")
        p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
        out = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, a) -> "Scaler":
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        mean = a.mean(axis=0)
        scale = a.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim: int) -> "Scaler":
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, a):
        return (a - self.mean) / self.scale

    def inverse(self, a):
        return a * self.scale + self.mean


class _Model:
    link: str
    x_scaler: Scaler
    y_scaler: Scaler

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def n_inputs(self) -> int:
        raise NotImplementedError

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, theta) -> None:
        i = 0
        for p in self.params():
            p[...] = np.reshape(theta[i:i + p.size], p.shape)
            i += p.size

    def copy(self):
        return copy.deepcopy(self)

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        return x

    def _output(self, pre: np.ndarray) -> np.ndarray:
        if self.link == "sigmoid":
            return expit(pre)
        return self.y_scaler.inverse(pre[:, None])[:, 0]

    def predict(self, x) -> np.ndarray:
        z = self.x_scaler.transform(self._check_x(x))
        pre, _ = self._pre(z)
        return self._output(pre)

    def forward(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("forward takes a single feature vector")
        return float(self.predict(x)[0])

    def _pre(self, z):
        raise NotImplementedError

    def _backward(self, cache, g) -> list[np.ndarray]:
        raise NotImplementedError

    def reinitialize(self, rng, init_scale: float = 1.0) -> None:
        raise NotImplementedError


class LinearModel(_Model):
    """``f(x) = link(b + w . z)`` with ``z`` the standardized features."""

    def __init__(self, weights, bias: float = 0.0, link: str = "identity",
                 x_scaler: Scaler | None = None, y_scaler: Scaler | None = None):
        if link not in LINKS:
            raise ValueError(f"unknown link {link!r}")
        self.weights = np.array(weights, dtype=float).reshape(-1)
        self._bias = np.array([bias], dtype=float)
        self.link = link
        self.x_scaler = x_scaler or Scaler.identity(len(self.weights))
        self.y_scaler = y_scaler or Scaler.identity(1)
        self.history: list[float] = []

    @property
    def bias(self) -> float:
        return float(self._bias[0])

    @property
    def n_inputs(self) -> int:
        return len(self.weights)

    @property
    def layer_dims(self) -> list[int]:
        return [self.n_inputs, 1]

    def params(self):
        return [self.weights, self._bias]

    @classmethod
    def init(cls, n_inputs: int, link: str, rng, init_scale: float = 1.0) -> "LinearModel":
        m = cls(np.zeros(n_inputs), 0.0, link)
        m.reinitialize(rng, init_scale)
        return m

    def reinitialize(self, rng, init_scale: float = 1.0) -> None:
        bound = init_scale / math.sqrt(max(self.n_inputs, 1))
        self.weights[...] = rng.uniform(-bound, bound, self.n_inputs)
        self._bias[...] = 0.0

    def _pre(self, z):
        return z @ self.weights + self._bias[0], z

    def _backward(self, z, g):
        return [z.T @ g, np.array([g.sum()])]

    def __repr__(self):
        return f"LinearModel(n_inputs={self.n_inputs}, link={self.link!r})"


class FeedForwardNet(_Model):
    """Fully connected net with ReLU hidden layers and a scalar output."""

    def __init__(self, layer_dims, weights=None, biases=None, link: str = "identity",
                 x_scaler: Scaler | None = None, y_scaler: Scaler | None = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise ValueError("layer_dims must be [q0, hidden..., 1] with positive sizes")
        if link not in LINKS:
            raise ValueError(f"unknown link {link!r}")
        self.layer_dims = dims
        pairs = list(zip(dims[:-1], dims[1:]))
        if weights is None:
            weights = [np.zeros(p) for p in pairs]
        if biases is None:
            biases = [np.zeros(p[1]) for p in pairs]
        self.weights = [np.array(w, dtype=float).reshape(p) for w, p in zip(weights, pairs)]
        self.biases = [np.array(b, dtype=float).reshape(p[1]) for b, p in zip(biases, pairs)]
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("one weight matrix and bias vector per layer")
        self.link = link
        self.x_scaler = x_scaler or Scaler.identity(dims[0])
        self.y_scaler = y_scaler or Scaler.identity(1)
        self.history: list[float] = []

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def representation_dim(self) -> int:
        return self.layer_dims[-2]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def init(cls, layer_dims, link: str, rng, init_scale: float = 1.0) -> "FeedForwardNet":
        net = cls(layer_dims, link=link)
        net.reinitialize(rng, init_scale)
        return net

    def reinitialize(self, rng, init_scale: float = 1.0) -> None:
        for w, b in zip(self.weights, self.biases):
            bound = init_scale / math.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, w.shape)
            b[...] = 0.0

    def _pre(self, z):
        acts, pres = [z], []
        h = z
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            pres.append(a)
            h = a if i == last else np.maximum(a, 0.0)
            acts.append(h)
        return h[:, 0], (acts, pres)

    def _backward(self, cache, g):
        acts, pres = cache
        grads = [None] * (2 * len(self.weights))
        delta = g[:, None]
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                delta = delta * (pres[i] > 0)
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i:
                delta = delta @ self.weights[i].T
        return grads

    def representation(self, x) -> np.ndarray:
        """Activations of the last hidden layer, shape ``(n, q_m)``."""
        h = self.x_scaler.transform(self._check_x(x))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h

    def __repr__(self):
        return f"FeedForwardNet(layer_dims={self.layer_dims}, link={self.link!r})"


def extract_representation(net: FeedForwardNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return net.representation(x)[0]
    return net.representation(x)


def make_model(hypothesis: str, n_inputs: int, link: str, seed: int = 0, index: int = 0,
               hidden=(5, 5, 5), init_scale: float = 1.0):
    rng = np.random.default_rng([seed, index, 0])
    if hypothesis == "linear":
        return LinearModel.init(n_inputs, link, rng, init_scale)
    if hypothesis == "net":
        return FeedForwardNet.init([n_inputs, *hidden, 1], link, rng, init_scale)
    raise ValueError(f"unknown hypothesis class {hypothesis!r}")


# --------------------------------------------------------------------------
# objective and gradient

def _scaled_objective(model, z, t, w, kind):
    pre, cache = model._pre(z)
    if model.link == "sigmoid":
        p = expit(pre)
        losses = loss(kind, p, t)
        if kind == BINARY_CROSS_ENTROPY:
            g = p - t
        else:
            g = 2.0 * (p - t) * p * (1.0 - p)
    else:
        if kind == BINARY_CROSS_ENTROPY:
            raise ValueError("binary cross-entropy needs the sigmoid link")
        losses = (pre - t) ** 2
        g = 2.0 * (pre - t)
    obj = float(np.dot(w, losses))
    grads = model._backward(cache, w * g)
    return obj, np.concatenate([q.ravel() for q in grads])


def _scaled_data(model, x, y, kind):
    z = model.x_scaler.transform(x)
    if model.link == "identity":
        t = (y - model.y_scaler.mean[0]) / model.y_scaler.scale[0]
        unit = model.y_scaler.scale[0] ** 2 if kind == SQUARED_ERROR else 1.0
    else:
        t, unit = y, 1.0
    return z, t, unit


def objective(model, x, y, w, kind: str) -> float:
    """``sum_i w_i L(f(x_i), y_i)`` on the original outcome scale."""
    kind = loss_kind(kind)
    return float(np.dot(np.asarray(w, dtype=float), loss(kind, model.predict(x), y)))


def objective_and_gradient(model, x, y, w, kind: str) -> tuple[float, np.ndarray]:
    """Objective and its gradient w.r.t. the flat parameters.

    Both are in the model's standardized units: for squared error with a
    target scale ``s`` the objective equals :func:`objective` divided by ``s**2``.
    """
    kind = loss_kind(kind)
    x = model._check_x(x)
    z, t, _ = _scaled_data(model, x, np.asarray(y, dtype=float), kind)
    return _scaled_objective(model, z, t, np.asarray(w, dtype=float), kind)


# --------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 5000
    seed: int = 0
    init_scale: float = 2.0
    convergence_tol: float = 1e-8
    optimizer: str = "lbfgs"
    restarts: int = 4
    standardize: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be > 0")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        if self.optimizer not in ("gd", "lbfgs"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def _guard(obj: float, unit: float, epoch: int, model) -> None:
    if not math.isfinite(obj) or abs(obj * unit) > DIVERGENCE_LIMIT:
        raise TrainingDiverged(
            f"objective {obj * unit:.4g} at epoch {epoch} exceeds {DIVERGENCE_LIMIT:g} "
            f"for {model!r}; lower the learning rate or check the weights"
        )


def _run_gd(model, z, t, w, kind, cfg, unit):
    history = []
    for epoch in range(cfg.epochs):
        obj, grad = _scaled_objective(model, z, t, w, kind)
        _guard(obj, unit, epoch, model)
        history.append(obj * unit)
        step = cfg.learning_rate * grad
        model.set_flat(model.get_flat() - step)
        if step.size == 0 or np.max(np.abs(step)) < cfg.convergence_tol:
            break
    obj, _ = _scaled_objective(model, z, t, w, kind)
    history.append(obj * unit)
    return obj, history


def _run_lbfgs(model, z, t, w, kind, cfg, unit):
    history = []

    def fun(theta):
        model.set_flat(theta)
        obj, grad = _scaled_objective(model, z, t, w, kind)
        if not (math.isfinite(obj) and np.all(np.isfinite(grad))):
            _guard(float("inf"), unit, len(history), model)
        return obj, grad

    # the guard only inspects accepted iterates; line-search trial points may overshoot
    def record(intermediate_result):
        obj = float(intermediate_result.fun)
        _guard(obj, unit, len(history), model)
        history.append(obj * unit)

    theta0 = model.get_flat()
    history.append(fun(theta0)[0] * unit)
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", callback=record,
                   options={"maxiter": cfg.epochs, "maxfun": 3 * cfg.epochs,
                            "gtol": cfg.convergence_tol, "ftol": 1e-13})
    model.set_flat(res.x)
    obj, _ = _scaled_objective(model, z, t, w, kind)
    return obj, history


def train_weighted(models, x, y, weights, kind: str, cfg: TrainConfig = TrainConfig()):
    """Minimize ``sum_i sum_k W[i, k] L(f_k(x_i), y_i)`` by full-batch optimization.

    ``weights`` has one column per model.  The objective separates across
    models, so each is optimized on its own column; this gives the same
    minimizer as optimizing the stacked parameters.  Returns trained copies;
    each carries ``history`` (objective per iteration) and ``final_objective``.
    """
    kind = loss_kind(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("no training data")
    if x.ndim == 1:
        x = x[:, None]
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[:, None]
    if weights.shape != (len(y), len(models)):
        raise ValueError(f"weights must have shape ({len(y)}, {len(models)})")
    run = _run_lbfgs if cfg.optimizer == "lbfgs" else _run_gd

    trained = []
    for k, template in enumerate(models):
        w = weights[:, k]
        base = template.copy()
        base._check_x(x)
        if cfg.standardize:
            active = w != 0
            rows = active if active.any() else slice(None)
            base.x_scaler = Scaler.fit(x[rows])
            if base.link == "identity":
                base.y_scaler = Scaler.fit(y[rows])
        z, t, unit = _scaled_data(base, x, y, kind)
        if not np.any(w):
            base.history = []
            base.final_objective = 0.0
            trained.append(base)
            continue
        best = None
        for r in range(cfg.restarts):
            cand = base.copy()
            if r:
                cand.reinitialize(np.random.default_rng([cfg.seed, k, r]), cfg.init_scale)
            obj, history = run(cand, z, t, w, kind, cfg, unit)
            cand.history = history
            cand.final_objective = obj * unit
            if best is None or cand.final_objective < best.final_objective:
                best = cand
        trained.append(best)
    return trained


# --------------------------------------------------------------------------
# serialization

FORMAT_VERSION = 1


def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in np.asarray(values, dtype=float).ravel())


def dumps_model(model) -> str:
    kind = "linear" if isinstance(model, LinearModel) else "feedforward"
    lines = [
        f"ldpfair-model {FORMAT_VERSION}",
        f"type {kind}",
        f"link {model.link}",
        "layer_dims " + " ".join(str(d) for d in model.layer_dims),
        "x_mean " + _fmt(model.x_scaler.mean),
        "x_scale " + _fmt(model.x_scaler.scale),
        "y_mean " + _fmt(model.y_scaler.mean),
        "y_scale " + _fmt(model.y_scaler.scale),
    ]
    for i, p in enumerate(model.params()):
        lines.append(f"param {i} " + " ".join(str(s) for s in p.shape))
        lines.append(_fmt(p))
    lines.append("end")
    return "\n".join(lines) + "\n"


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()], dtype=float)


def loads_model(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    it = iter(lines)
    head = next(it).split()
    if head[0] != "ldpfair-model":
        raise ValueError("not a model block")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {head[1]}")
    meta = {}
    params = []
    for line in it:
        key, _, rest = line.partition(" ")
        if key == "end":
            break
        if key == "param":
            shape = tuple(int(s) for s in rest.split()[1:])
            params.append(_floats(next(it)).reshape(shape))
        else:
            meta[key] = rest
    dims = [int(d) for d in meta["layer_dims"].split()]
    x_scaler = Scaler(_floats(meta["x_mean"]), _floats(meta["x_scale"]))
    y_scaler = Scaler(_floats(meta["y_mean"]), _floats(meta["y_scale"]))
    if meta["type"] == "linear":
        model = LinearModel(np.zeros(dims[0]), 0.0, meta["link"], x_scaler, y_scaler)
    else:
        model = FeedForwardNet(dims, link=meta["link"], x_scaler=x_scaler, y_scaler=y_scaler)
    for dst, src in zip(model.params(), params, strict=True):
        dst[...] = src
    return model
