"""Classifiers with analytic input gradients and pass accounting.

Three model kinds are provided: an affine ``LinearModel``, the two-layer
``TwoLayerNet`` with a frozen sign output layer, and a general ``MlpModel``.
Models are immutable; training returns a new instance.

The evaluation functions ``forward``, ``vjp``, ``grad_class`` and ``jacobian``
take an optional :class:`PassCounter`. One forward pass is one full logits
evaluation and one backward pass is one vector-Jacobian product (one gradient
row).
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FormatError
from .linalg import as_vector, frozen

FORMAT_VERSION = 1


@dataclass
class PassCounter:
    forward_count: int = 0
    backward_count: int = 0

    def add(self, forward=0, backward=0):
        if forward < 0 or backward < 0:
            raise ValueError("pass counters are monotone")
        self.forward_count += forward
        self.backward_count += backward

    def merge(self, other):
        self.add(other.forward_count, other.backward_count)

    def reset(self):
        self.forward_count = 0
        self.backward_count = 0

    @property
    def total(self):
        return self.forward_count + self.backward_count


# --- activations -----------------------------------------------------------


@dataclass(frozen=True)
class SmoothLeakyActivation:
    """sigma(z) = ((1+b) z + (1-b) sqrt(z^2+1)) / 2.

    Its derivative lies in (b, 1) and its second derivative is bounded by
    (1-b)/2, which is the smoothness constant ``L``.
    """

    beta: float = 0.1
    kind: str = field(default="smooth_leaky", init=False)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")

    @property
    def smoothness(self):
        return (1.0 - self.beta) / 2.0

    def __call__(self, z):
        b = self.beta
        return 0.5 * ((1.0 + b) * z + (1.0 - b) * np.sqrt(z * z + 1.0))

    def deriv(self, z):
        b = self.beta
        return 0.5 * ((1.0 + b) + (1.0 - b) * z / np.sqrt(z * z + 1.0))

    def second_deriv(self, z):
        return self.smoothness / (z * z + 1.0) ** 1.5

    def to_json(self):
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class ReluActivation:
    kind: str = field(default="relu", init=False)

    def __call__(self, z):
        return np.maximum(z, 0.0)

    def deriv(self, z):
        return (np.asarray(z) > 0).astype(np.float64)

    def to_json(self):
        return {"kind": self.kind}


def activation_from_json(obj):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise FormatError("expected an object with a 'kind' key", "activation")
    if obj["kind"] == "smooth_leaky":
        beta = obj.get("beta")
        if not isinstance(beta, (int, float)):
            raise FormatError("missing or non-numeric beta", "activation.beta")
        return SmoothLeakyActivation(float(beta))
    if obj["kind"] == "relu":
        return ReluActivation()
    raise FormatError(f"unknown activation {obj['kind']!r}", "activation.kind")


# --- models ----------------------------------------------------------------


class _Model:
    kind = "model"

    def _check_input(self, x):
        x = as_vector(x)
        if x.shape[0] != self.input_dim:
            raise ConfigError(
                f"dimension mismatch: model expects {self.input_dim} inputs, got {x.shape[0]}"
            )
        return x

    def _check_class(self, i):
        if not (isinstance(i, (int, np.integer)) and 0 <= i < self.num_classes):
            raise ConfigError(f"invalid class index {i!r} for a {self.num_classes}-output model")
        return int(i)


@dataclass(frozen=True, eq=False)
class LinearModel(_Model):
    """F(x) = W x + b."""

    W: np.ndarray
    b: np.ndarray
    kind = "linear"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or W.shape[0] != b.shape[0]:
            raise ConfigError("W must be k x d with len(b) == k")
        if W.shape[0] < 2:
            raise ConfigError("a linear classifier needs k >= 2 classes")
        object.__setattr__(self, "W", frozen(W))
        object.__setattr__(self, "b", frozen(b))

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def num_classes(self):
        return self.W.shape[0]

    def logits_batch(self, X):
        return X @ self.W.T + self.b

    def _vjp(self, x, cot):
        return cot @ self.W

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def with_parameters(self, **params):
        return replace(self, **params)

    def param_grads(self, X, G, first_layer_only=False):
        return {"W": G.T @ X, "b": G.sum(axis=0)}


@dataclass(frozen=True, eq=False)
class TwoLayerNet(_Model):
    """N(x) = U sigma(W1 x) with a frozen sign output layer U (entries +-1/sqrt(m)).

    ``output_signs`` is (k, m); k = 1 gives the scalar network, k > 1 gives
    one-vs-rest heads sharing the first layer.
    """

    first_layer: np.ndarray
    output_signs: np.ndarray
    activation: SmoothLeakyActivation = SmoothLeakyActivation()
    init_snapshot: np.ndarray = None

    kind = "two_layer"

    def __post_init__(self):
        W1 = np.asarray(self.first_layer, dtype=np.float64)
        U = np.asarray(self.output_signs, dtype=np.float64)
        if U.ndim == 1:
            U = U[None, :]
        if W1.ndim != 2 or U.ndim != 2 or U.shape[1] != W1.shape[0]:
            raise ConfigError("first_layer must be m x d and output_signs k x m")
        m = W1.shape[0]
        if not np.all(np.abs(U) == 1.0 / math.sqrt(m)):
            raise ConfigError("output signs must all be +-1/sqrt(m)")
        snap = W1 if self.init_snapshot is None else np.asarray(self.init_snapshot, dtype=np.float64)
        if snap.shape != W1.shape:
            raise ConfigError("init_snapshot must match first_layer shape")
        object.__setattr__(self, "first_layer", frozen(W1))
        object.__setattr__(self, "output_signs", frozen(U))
        object.__setattr__(self, "init_snapshot", frozen(snap))

    @classmethod
    def init(cls, d, m, rng, beta=0.1, heads=1):
        """Kaiming-style init: rows ~ N(0, I/d), signs uniform on +-1/sqrt(m)."""
        W1 = rng.generator.standard_normal((m, d)) / math.sqrt(d)
        signs = rng.generator.integers(0, 2, size=(heads, m)) * 2 - 1
        return cls(W1, signs / math.sqrt(m), SmoothLeakyActivation(beta))

    @property
    def input_dim(self):
        return self.first_layer.shape[1]

    @property
    def hidden_dim(self):
        return self.first_layer.shape[0]

    @property
    def num_classes(self):
        return self.output_signs.shape[0]

    def logits_batch(self, X):
        return self.activation(X @ self.first_layer.T) @ self.output_signs.T

    def _vjp(self, x, cot):
        coef = (cot @ self.output_signs) * self.activation.deriv(self.first_layer @ x)
        return coef @ self.first_layer

    def parameters(self):
        return {"first_layer": self.first_layer}

    def with_parameters(self, **params):
        return replace(self, **params)

    def param_grads(self, X, G, first_layer_only=True):
        if not first_layer_only:
            raise ConfigError("TwoLayerNet trains its first layer only; the output signs are frozen")
        pre = X @ self.first_layer.T
        dpre = (G @ self.output_signs) * self.activation.deriv(pre)
        return {"first_layer": dpre.T @ X}


@dataclass(frozen=True, eq=False)
class MlpModel(_Model):
    """Fully connected network; hidden layers share ``activation``, output is affine."""

    weights: tuple
    biases: tuple
    activation: object = ReluActivation()

    kind = "mlp"

    def __post_init__(self):
        Ws = tuple(frozen(w) for w in self.weights)
        bs = tuple(frozen(np.asarray(b).reshape(-1)) for b in self.biases)
        if not Ws or len(Ws) != len(bs):
            raise ConfigError("need one bias vector per weight matrix")
        for i, (W, b) in enumerate(zip(Ws, bs)):
            if W.ndim != 2 or W.shape[0] != b.shape[0]:
                raise ConfigError(f"layer {i}: weights must be out x in with matching bias")
            if i and W.shape[1] != Ws[i - 1].shape[0]:
                raise ConfigError(f"layer {i}: input dim does not chain with layer {i - 1}")
        if Ws[-1].shape[0] < 2:
            raise ConfigError("an MLP classifier needs k >= 2 outputs")
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "biases", bs)

    @classmethod
    def init(cls, dims, rng, activation=None):
        """He-style init (variance 2/fan_in for ReLU, 1/fan_in otherwise), zero biases."""
        activation = activation or ReluActivation()
        gain = 2.0 if activation.kind == "relu" else 1.0
        Ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            Ws.append(rng.generator.standard_normal((fan_out, fan_in)) * math.sqrt(gain / fan_in))
            bs.append(np.zeros(fan_out))
        return cls(tuple(Ws), tuple(bs), activation)

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def num_classes(self):
        return self.weights[-1].shape[0]

    def _forward_cache(self, X):
        pres, acts = [], [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            pres.append(z)
            h = z if i == last else self.activation(z)
            acts.append(h)
        return pres, acts

    def logits_batch(self, X):
        return self._forward_cache(X)[1][-1]

    def _vjp(self, x, cot):
        pres, _ = self._forward_cache(x[None, :])
        g = cot[None, :]
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * self.activation.deriv(pres[i])
            g = g @ self.weights[i]
        return g[0]

    def parameters(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    def with_parameters(self, **params):
        Ws = [params.get(f"W{i}", W) for i, W in enumerate(self.weights)]
        bs = [params.get(f"b{i}", b) for i, b in enumerate(self.biases)]
        return replace(self, weights=tuple(Ws), biases=tuple(bs))

    def param_grads(self, X, G, first_layer_only=False):
        pres, acts = self._forward_cache(X)
        grads = {}
        g = G
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * self.activation.deriv(pres[i])
            if i == 0 or not first_layer_only:
                grads[f"W{i}"] = g.T @ acts[i]
                grads[f"b{i}"] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i]
        return grads


# --- counted evaluation ----------------------------------------------------


def forward(model, x, counter=None):
    x = model._check_input(x)
    out = model.logits_batch(x[None, :])[0]
    if counter is not None:
        counter.add(forward=1)
    return out


def vjp(model, x, cotangent, counter=None):
    """Gradient of <cotangent, N(x)> w.r.t. x; one backward pass."""
    x = model._check_input(x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (model.num_classes,):
        raise ConfigError(f"cotangent must have length {model.num_classes}")
    g = model._vjp(x, cot)
    if counter is not None:
        counter.add(backward=1)
    return g


def grad_class(model, x, class_index, counter=None):
    i = model._check_class(class_index)
    e = np.zeros(model.num_classes)
    e[i] = 1.0
    return vjp(model, x, e, counter)


def jacobian(model, x, class_list, counter=None):
    class_list = list(class_list)
    if not class_list:
        raise ConfigError("class_list must be non-empty")
    for c in class_list:
        model._check_class(c)
    return np.stack([grad_class(model, x, c, counter) for c in class_list])


def predict(model, X):
    """Uncounted batch argmax (lowest index wins ties)."""
    return np.argmax(model.logits_batch(np.asarray(X, dtype=np.float64)), axis=1)


# --- persistence -----------------------------------------------------------


def model_to_json(model):
    if isinstance(model, LinearModel):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "linear",
            "dims": [model.input_dim, model.num_classes],
            "weights": [model.W.tolist()],
            "biases": [model.b.tolist()],
        }
    if isinstance(model, TwoLayerNet):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "two_layer",
            "dims": [model.input_dim, model.hidden_dim, model.num_classes],
            "activation": model.activation.to_json(),
            "weights": [model.first_layer.tolist()],
            "biases": [],
            "output_signs": model.output_signs.tolist(),
            "init_snapshot": model.init_snapshot.tolist(),
        }
    if isinstance(model, MlpModel):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "mlp",
            "dims": model.dims,
            "activation": model.activation.to_json(),
            "weights": [W.tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
    raise ConfigError(f"cannot serialize {type(model).__name__}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=None, separators=(",", ":"))
        fh.write("\n")


def _array(obj, key, ndim):
    if key not in obj:
        raise FormatError("missing field", key)
    try:
        a = np.array(obj[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError("not a rectangular numeric array", key) from None
    if a.ndim != ndim or not np.all(np.isfinite(a)):
        raise FormatError(f"expected a finite {ndim}-D array", key)
    return a


def model_from_json(obj):
    if not isinstance(obj, dict):
        raise FormatError("top level must be an object", "<document>")
    if obj.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {obj.get('format_version')!r} (expected {FORMAT_VERSION})",
            "format_version",
        )
    kind = obj.get("kind")
    weights = obj.get("weights")
    biases = obj.get("biases")
    if not isinstance(weights, list) or not isinstance(biases, list):
        raise FormatError("weights and biases must be lists", "weights")
    try:
        if kind == "linear":
            if len(weights) != 1 or len(biases) != 1:
                raise FormatError("linear model has exactly one layer", "weights")
            return LinearModel(_array({"w": weights[0]}, "w", 2), _array({"b": biases[0]}, "b", 1))
        if kind == "two_layer":
            act = activation_from_json(obj.get("activation"))
            if len(weights) != 1:
                raise FormatError("two_layer model has exactly one trainable layer", "weights")
            signs = np.array(obj.get("output_signs"), dtype=np.float64)
            return TwoLayerNet(
                _array({"weights": weights[0]}, "weights", 2),
                signs,
                act,
                _array(obj, "init_snapshot", 2),
            )
        if kind == "mlp":
            act = activation_from_json(obj.get("activation"))
            Ws = [_array({"weights": w}, "weights", 2) for w in weights]
            bs = [_array({"biases": b}, "biases", 1) for b in biases]
            model = MlpModel(tuple(Ws), tuple(bs), act)
            if obj.get("dims") is not None and list(obj["dims"]) != model.dims:
                raise FormatError(f"dims {obj['dims']} disagree with weight shapes {model.dims}", "dims")
            return model
    except FormatError:
        raise
    except (ConfigError, TypeError, ValueError) as exc:
        raise FormatError(str(exc), kind) from None
    raise FormatError(f"unknown model kind {kind!r}", "kind")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON ({exc.msg} at char {exc.pos})", "<document>") from None
    return model_from_json(obj)
