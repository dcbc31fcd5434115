"""Logistic regression and ReLU feed-forward networks with hand-written backprop.

Weights are stored as ``(fan_out, fan_in)`` matrices, so a layer computes
``h @ W.T + b``. Logistic regression is the zero-hidden-layer case.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mitigation import MitigationConfig, loss_components, combined_loss_grad_p

__all__ = [
    "ModelKind",
    "Init",
    "ModelSpec",
    "ModelState",
    "TrainConfig",
    "TrainResult",
    "NumericOverflowError",
    "DivergenceError",
    "init_params",
    "dropout_mask",
    "forward",
    "backward",
    "sgd_step",
    "train",
    "state_to_dict",
    "state_from_dict",
]

logger = logging.getLogger(__name__)

MODEL_FORMAT = "fairgap.model/1"


class ModelKind(str, enum.Enum):
    BLR = "blr"
    MLP = "mlp"


class Init(str, enum.Enum):
    XAVIER_UNIFORM = "xavier_uniform"
    HE_NORMAL = "he_normal"


class NumericOverflowError(FloatingPointError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.MLP
    hidden_layers: int = 3
    hidden_width: int = 200
    dropout_rate: float = 0.01
    init: Init = Init.XAVIER_UNIFORM

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "init", Init(self.init))
        if self.kind is ModelKind.MLP and self.hidden_layers < 1:
            raise ValueError("an MLP needs at least one hidden layer")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_hidden(self) -> int:
        return 0 if self.kind is ModelKind.BLR else self.hidden_layers

    def layer_sizes(self, input_dim: int) -> list[int]:
        return [input_dim] + [self.hidden_width] * self.n_hidden + [1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "hidden_layers": self.hidden_layers,
            "hidden_width": self.hidden_width,
            "dropout_rate": self.dropout_rate,
            "init": self.init.value,
        }


@dataclass(frozen=True, eq=False)
class ModelState:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same number of layers")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {W.shape[1]} != previous output {self.weights[i - 1].shape[0]}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("the output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "ModelState":
        return ModelState([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def allclose(self, other: "ModelState", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.flat_parts(), other.flat_parts()))

    def array_equal(self, other: "ModelState") -> bool:
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.flat_parts(), other.flat_parts())
        )

    def flat_parts(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


def init_params(spec: ModelSpec, input_dim: int, seed=0, dtype=np.float64) -> ModelState:
    """Random weights per ``spec.init`` and zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes(input_dim)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if spec.init is Init.XAVIER_UNIFORM:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        else:
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(W.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ModelState(weights, biases)


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64):
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1 / (1 - rate)``.

    Small rates sample drop positions as a Bernoulli process through geometric
    gaps, which is exact and far cheaper than one uniform draw per unit.
    """
    size = int(np.prod(shape))
    mask = np.full(size, 1.0 / (1.0 - rate), dtype=dtype)
    if rate >= 0.1:
        mask[rng.random(size) < rate] = 0
        return mask.reshape(shape)
    chunk = max(16, int(size * rate * 1.2) + 16)
    pos = -1
    while True:
        hits = pos + np.cumsum(rng.geometric(rate, size=chunk))
        mask[hits[hits < size]] = 0
        if hits[-1] >= size:
            break
        pos = int(hits[-1])
    return mask.reshape(shape)


def forward(state: ModelState, spec: ModelSpec, X, rng=None, train: bool = False, masks=None):
    """Predicted probabilities for the rows of ``X`` and a cache for :func:`backward`.

    In train mode each hidden layer's ReLU output is multiplied by an inverted
    dropout mask (keep probability ``1 - rate``, survivors scaled by
    ``1 / (1 - rate)``). Masks are drawn from ``rng`` unless given explicitly.
    Eval mode applies no dropout. Probabilities are clipped to
    ``[eps, 1 - eps]`` of the working dtype so log-losses stay finite.
    """
    X = np.asarray(X, dtype=state.dtype)
    if X.ndim != 2 or X.shape[1] != state.input_dim:
        raise ValueError(f"X must have shape (n, {state.input_dim}), got {X.shape}")
    rate = spec.dropout_rate
    use_dropout = train and rate > 0
    if use_dropout and masks is None and rng is None:
        raise ValueError("train mode with dropout needs an rng or explicit masks")

    inputs, gates, used_masks = [], [], []
    h = X
    n_layers = len(state.weights)
    for i, (W, b) in enumerate(zip(state.weights, state.biases)):
        inputs.append(h)
        a = h @ W.T
        a += b
        if i == n_layers - 1:
            break
        # gate = d(layer output)/d(pre-activation): ReLU slope times dropout mask
        gate = (a > 0).astype(a.dtype)
        if use_dropout:
            m = masks[i] if masks is not None else dropout_mask(a.shape, rate, rng, a.dtype)
            gate *= m
            used_masks.append(m)
        else:
            used_masks.append(None)
        a *= gate
        gates.append(gate)
        h = a

    logits = a[:, 0]
    if not np.all(np.isfinite(logits)):
        raise NumericOverflowError("non-finite logits in forward pass")
    eps = np.finfo(logits.dtype).eps
    p = np.clip(_sigmoid(logits), eps, 1.0 - eps)
    cache = {"inputs": inputs, "gates": gates, "masks": used_masks, "logits": logits, "p": p}
    return p, cache


def backward(state: ModelState, spec: ModelSpec, cache, dL_dp) -> ModelState:
    """Gradient of a scalar loss given its derivative with respect to each ``p``."""
    p = cache["p"]
    delta = (np.asarray(dL_dp, dtype=p.dtype) * p * (1.0 - p))[:, None]
    n_layers = len(state.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gW[i] = delta.T @ cache["inputs"][i]
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ state.weights[i]
        delta *= cache["gates"][i - 1]
    return ModelState(gW, gb)


def sgd_step(state: ModelState, grad: ModelState, step_size: float) -> ModelState:
    """Plain gradient step ``theta - step_size * grad``."""
    return ModelState(
        [W - step_size * g for W, g in zip(state.weights, grad.weights)],
        [b - step_size * g for b, g in zip(state.biases, grad.biases)],
    )


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings.

    ``step_size`` applies to the row-averaged loss; 0.1 on a mean over 1000
    rows moves parameters as far as 1e-4 on the 1000-row sum.
    ``select_on`` picks the epoch whose full-train-set loss is lowest, using
    either the total regularized loss or its cross-entropy part only.
    ``seed`` is an int or a sequence of ints used as ``SeedSequence`` entropy.
    """

    batch_size: int = 1000
    step_size: float = 0.1
    epochs: int = 50
    seed: int | tuple = 0
    select_on: str = "total"
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if self.select_on not in ("total", "primary"):
            raise ValueError(f"select_on must be 'total' or 'primary', got {self.select_on!r}")
        np.dtype(self.dtype)


def _entropy(seed):
    return int(seed) if np.isscalar(seed) else [int(s) for s in seed]


@dataclass
class TrainResult:
    state: ModelState
    best_epoch: int
    best_loss: float
    trace: list = field(default_factory=list)
    initial_state: ModelState | None = None


def _plain_ce_grad(p, y, w):
    # mean (or weight-normalized) cross-entropy with no mitigation code involved
    y = np.asarray(y, dtype=p.dtype)
    g = -y / p + (1 - y) / (1 - p)
    weights = np.ones_like(p) if w is None else w
    return weights * g / weights.sum()


def _plain_ce(p, y, w):
    y = np.asarray(y, dtype=p.dtype)
    losses = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    weights = np.ones_like(p) if w is None else w
    return float((weights * losses).sum() / weights.sum())


def _epoch_losses(state, spec, X, y, z, w, mitigation):
    p, _ = forward(state, spec, X)
    if mitigation is None:
        primary = _plain_ce(p, y, w)
        return primary, 0.0, primary
    primary, fair, _ = loss_components(p, y, z, mitigation, w, allow_empty=True)
    return primary, fair, primary + fair


def train(
    X,
    y,
    z,
    spec: ModelSpec,
    config: TrainConfig = TrainConfig(),
    mitigation: MitigationConfig | None = MitigationConfig(),
    sample_weight=None,
    validation=None,
    init_state: ModelState | None = None,
) -> TrainResult:
    """Fit by mini-batch SGD and return the lowest-loss epoch snapshot.

    Rows are reshuffled every epoch and split into full batches plus a final
    partial batch. The correlation penalty of each step uses the rows of the
    current batch. After every epoch the full training set is scored in eval
    mode; ``validation`` (a tuple ``(X, y, z, w)``) adds test columns to the
    trace. ``mitigation=None`` bypasses the mitigation module and trains on the
    plain mean cross-entropy (weight-normalized when ``sample_weight`` is given).

    Raises
    ------
    DivergenceError
        When an epoch loss is not finite.
    """
    dtype = np.dtype(config.dtype)
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y)
    z = np.asarray(z)
    w = None if sample_weight is None else np.asarray(sample_weight, dtype=dtype)
    n = X.shape[0]
    ss = np.random.SeedSequence(_entropy(config.seed))
    init_seed, shuffle_seed = ss.spawn(2)
    rng = np.random.default_rng(shuffle_seed)
    if init_state is None:
        state = init_params(spec, X.shape[1], init_seed, dtype=dtype)
    else:
        state = ModelState([a.astype(dtype) for a in init_state.weights], [a.astype(dtype) for a in init_state.biases])
    initial = state
    step = dtype.type(config.step_size)

    if validation is not None:
        vX, vy, vz, vw = validation
        vX = np.asarray(vX, dtype=dtype)
        vw = None if vw is None else np.asarray(vw, dtype=dtype)

    best_state, best_epoch, best_loss = state, 0, math.inf
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        try:
            # overflow is detected explicitly below, so silence numpy's warnings
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, n, config.batch_size):
                    idx = order[start : start + config.batch_size]
                    wb = None if w is None else w[idx]
                    p, cache = forward(state, spec, X[idx], rng=rng, train=True)
                    if mitigation is None:
                        g = _plain_ce_grad(p, y[idx], wb)
                    else:
                        g = combined_loss_grad_p(p, y[idx], z[idx], mitigation, wb, allow_empty=True)
                    state = sgd_step(state, backward(state, spec, cache, g), step)
                primary, fair, total = _epoch_losses(state, spec, X, y, z, w, mitigation)
        except NumericOverflowError:
            raise DivergenceError(epoch, float("nan")) from None
        if not math.isfinite(total):
            raise DivergenceError(epoch, total)
        row = {"epoch": epoch, "primary_loss": primary, "fairness_loss": fair, "total_loss": total}
        if validation is not None:
            tp, tf, tt = _epoch_losses(state, spec, vX, vy, vz, vw, mitigation)
            row.update(test_primary_loss=tp, test_fairness_loss=tf, test_total_loss=tt)
        trace.append(row)
        score = total if config.select_on == "total" else primary
        if score < best_loss:
            best_state, best_epoch, best_loss = state, epoch, score
        logger.debug("epoch %d: total=%.6f primary=%.6f fairness=%.6f", epoch, total, primary, fair)

    return TrainResult(state=best_state, best_epoch=best_epoch, best_loss=best_loss, trace=trace, initial_state=initial)


def state_to_dict(state: ModelState) -> dict:
    return {
        "format": MODEL_FORMAT,
        "dtype": str(state.dtype),
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(state.weights, state.biases)
        ],
    }


def state_from_dict(doc: dict) -> ModelState:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}, expected {MODEL_FORMAT!r}")
    dtype = np.dtype(doc.get("dtype", "float64"))
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.asarray(layer["weight"], dtype=dtype).reshape(layer["shape"]))
        biases.append(np.asarray(layer["bias"], dtype=dtype))
    return ModelState(weights, biases)
