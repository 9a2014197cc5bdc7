"""Feed-forward regression network mapping ratio vectors to oxygen concentration.

Every hidden neuron computes ``sigmoid(w . x + b)``; the single output neuron
computes ``output_scale * sigmoid(w . h + b)``, so predictions lie in
``(0, output_scale)``. Training minimizes the mean squared error over the
whole training set with Adam, one update per epoch.

Arrays are float64. Weight matrices have shape ``(fan_out, fan_in)`` and a
batch of observations is a ``(m, input_dim)`` matrix.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .errors import DomainError, ParseError, TrainingAborted

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: int
    neurons_per_layer: int
    output_scale: float = 110.0

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "neurons_per_layer"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DomainError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not (np.isfinite(self.output_scale) and self.output_scale > 0):
            raise DomainError("output_scale must be positive")
        object.__setattr__(self, "output_scale", float(self.output_scale))

    @property
    def layer_sizes(self):
        return [self.input_dim] + [self.neurons_per_layer] * self.hidden_layers + [1]

    def shapes(self):
        """``[(W shape, b shape), ...]`` from the first hidden layer to the output."""
        sizes = self.layer_sizes
        return [((fan_out, fan_in), (fan_out,)) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]


@dataclass
class NetworkModel:
    spec: NetworkSpec
    weights: list
    biases: list

    def __post_init__(self):
        shapes = self.spec.shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise DomainError(f"expected {len(shapes)} layers")
        for k, ((ws, bs), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if np.shape(w) != ws or np.shape(b) != bs:
                raise DomainError(f"layer {k}: expected shapes {ws} and {bs}, got {np.shape(w)} and {np.shape(b)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {k} holds non-finite parameters")

    def copy(self):
        return NetworkModel(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        """Flat list ``[W1, b1, W2, b2, ...]`` of the parameter arrays (not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def predict(self, x):
        """Predictions for a batch ``x`` of shape ``(m, input_dim)``."""
        x = _as_batch(self, x)
        return _forward(self, x)[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    log_every: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise DomainError("epochs must be a non-negative integer")
        if int(self.log_every) != self.log_every or self.log_every < 1:
            raise DomainError("log_every must be a positive integer")


@dataclass
class AdamState:
    """First/second moment estimates, one array per parameter array, and the step count."""

    t: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, model):
        params = model.parameters()
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def copy(self):
        return AdamState(self.t, [a.copy() for a in self.m], [a.copy() for a in self.v])


@dataclass
class TrainReport:
    final_cost: float
    trace: list
    duration_s: float
    config: TrainConfig
    adam_state: AdamState = field(default=None, repr=False)

    @property
    def initial_cost(self):
        return self.trace[0][1]


def init_model(spec, seed):
    """Weights uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases zero."""
    gen = rng.stream(seed, "init")
    weights, biases = [], []
    for (ws, bs) in spec.shapes():
        bound = 1.0 / np.sqrt(ws[1])
        weights.append(gen.uniform(-bound, bound, size=ws))
        biases.append(np.zeros(bs))
    return NetworkModel(spec, weights, biases)


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise DomainError(f"expected {model.spec.input_dim} input features, got shape {x.shape}")
    return x


def _sigmoid_(z):
    # logistic via tanh, in place; stable for any finite z and much faster than exp
    z *= 0.5
    np.tanh(z, out=z)
    z *= 0.5
    z += 0.5
    return z


def _forward(model, x):
    """Activations of every layer (input first) and the scaled predictions."""
    acts = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w.T
        z += b
        a = _sigmoid_(z)
        acts.append(a)
    out = _sigmoid_(a @ model.weights[-1].T + model.biases[-1])[:, 0]
    acts.append(out)
    return acts, model.spec.output_scale * out


def _backward(model, acts, pred, y):
    """Gradient of the MSE w.r.t. ``[W1, b1, W2, b2, ...]`` given the forward pass."""
    m = y.size
    out = acts[-1]
    delta = ((2.0 / m) * (pred - y) * model.spec.output_scale * out * (1.0 - out))[:, None]
    grads = [None] * (2 * len(model.weights))
    ones = np.ones(m)
    for k in range(len(model.weights) - 1, -1, -1):
        a_prev = acts[k]
        grads[2 * k] = delta.T @ a_prev
        grads[2 * k + 1] = ones @ delta
        if k > 0:
            delta = delta @ model.weights[k]
            delta *= a_prev
            delta -= delta * a_prev
    return grads


def _xy(model, data):
    x = _as_batch(model, data.ratios)
    y = np.asarray(data.o2, dtype=float)
    if y.size == 0:
        raise DomainError("empty dataset")
    return x, y


def forward(model, ratios):
    """Predicted concentration (% air) for a single ratio vector."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 1:
        raise DomainError("forward takes one ratio vector; use NetworkModel.predict for batches")
    return float(model.predict(ratios)[0])


def cost_mse(model, data):
    """``J = mean((pred - o2)**2)`` over ``data`` (anything with ``ratios`` and ``o2``)."""
    x, y = _xy(model, data)
    err = model.predict(x) - y
    return float(np.mean(err * err))


def backward(model, data):
    """Exact gradient of :func:`cost_mse`, as ``(weight_grads, bias_grads)``."""
    x, y = _xy(model, data)
    acts, pred = _forward(model, x)
    grads = _backward(model, acts, pred, y)
    return grads[0::2], grads[1::2]


def adam_step(model, grads, state, cfg):
    """One Adam update, applied in place to ``model`` and ``state``.

    ``grads`` is ordered like :meth:`NetworkModel.parameters`. The step index
    is ``state.t`` after increment. Returns ``(model, state)``.
    """
    state.t += 1
    t = state.t
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(model.parameters(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return model, state


def train(spec, train_data, cfg, model=None, state=None):
    """Full-batch Adam training for ``cfg.epochs`` epochs.

    Starts from ``init_model(spec, cfg.seed)`` unless ``model`` (and
    optionally its ``state``) are given to resume a run; the inputs are not
    modified. The cost trace holds ``(epoch, J)`` for the model before epoch
    ``epoch``'s update, every ``cfg.log_every`` epochs, plus the final cost.

    Raises
    ------
    TrainingAborted
        If the cost becomes non-finite.
    """
    model = init_model(spec, cfg.seed) if model is None else model.copy()
    if model.spec != spec:
        raise DomainError("model does not match the requested network spec")
    state = AdamState.zeros_like(model) if state is None else state.copy()
    x, y = _xy(model, train_data)

    trace = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        acts, pred = _forward(model, x)
        if epoch % cfg.log_every == 0:
            err = pred - y
            cost = float(np.mean(err * err))
            if not np.isfinite(cost):
                raise TrainingAborted(epoch, cost)
            trace.append((epoch, cost))
            logger.debug("epoch %d  J=%.6g", epoch, cost)
        adam_step(model, _backward(model, acts, pred, y), state, cfg)
    final = cost_mse(model, train_data)
    if not np.isfinite(final):
        raise TrainingAborted(cfg.epochs, final)
    trace.append((cfg.epochs, final))
    duration = time.perf_counter() - start
    return model, TrainReport(final, trace, duration, cfg, state)


# -- persistence ------------------------------------------------------------

def save_model(path, model, adam_state=None, config=None):
    doc = {
        "version": MODEL_VERSION,
        "spec": asdict(model.spec),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    if adam_state is not None:
        doc["adam_state"] = {
            "t": adam_state.t,
            "m": [a.tolist() for a in adam_state.m],
            "v": [a.tolist() for a in adam_state.v],
        }
    if config is not None:
        doc["train_config"] = asdict(config)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Read a model file; returns ``(model, adam_state or None, train_config or None)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    if not isinstance(doc, dict) or doc.get("version") != MODEL_VERSION:
        raise ParseError(f"unsupported model version {doc.get('version') if isinstance(doc, dict) else None!r}", path)
    try:
        spec = NetworkSpec(**doc["spec"])
        model = NetworkModel(
            spec,
            [np.array(w, dtype=float) for w in doc["weights"]],
            [np.array(b, dtype=float) for b in doc["biases"]],
        )
        state = None
        if doc.get("adam_state") is not None:
            st = doc["adam_state"]
            state = AdamState(int(st["t"]), [np.array(a, dtype=float) for a in st["m"]],
                              [np.array(a, dtype=float) for a in st["v"]])
            for p, a, b in zip(model.parameters(), state.m, state.v):
                if a.shape != p.shape or b.shape != p.shape:
                    raise DomainError("adam state shapes do not match the model")
        config = TrainConfig(**doc["train_config"]) if doc.get("train_config") is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model file: {exc}", path) from exc
    return model, state, config


def load_model(path):
    return load_checkpoint(path)[0]
