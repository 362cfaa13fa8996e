"""Functional neural network for scalar-on-function regression.

The first hidden layer has functional weights expanded in a B-spline basis,
``gamma_kp(t) = sum_m c_kpm zeta_m(t)``. Swapping the sum and the integral
turns the layer into an ordinary dense layer acting on the fixed features
``int zeta_m(t) X_p(t) dt``, which are computed once per sample. Everything
after that is a plain feed-forward network trained by backpropagation and
Adam with early stopping.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from fnncc.basis import BSplineBasis, QuadratureRule, quadrature_weights
from fnncc.errors import ConfigurationError, NumericError, TrainingDivergedError
from fnncc.fpca import as_grid_values

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear", "softmax")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    if name == "tanh":
        return np.tanh(a)
    if name == "linear":
        return a
    if name == "softmax":
        e = np.exp(a - a.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ConfigurationError(f"unknown activation {name!r}")


def activation_backward(name: str, a: np.ndarray, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-activations given the gradient w.r.t. outputs."""
    if name == "relu":
        return dh * (a > 0)
    if name == "sigmoid":
        return dh * h * (1.0 - h)
    if name == "tanh":
        return dh * (1.0 - h**2)
    if name == "linear":
        return dh
    if name == "softmax":
        return h * (dh - np.sum(dh * h, axis=1, keepdims=True))
    raise ConfigurationError(f"unknown activation {name!r}")


def xavier_uniform(fan_in: int, fan_out: int, rng) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass(frozen=True)
class FnnConfig:
    """Hyperparameters of a (functional) network and its training.

    ``n_neurons`` lists layer widths including the width-1 output layer;
    ``activations`` has one entry per layer. The functional weights use a
    cubic B-spline basis with ``n_weight_basis`` functions per covariate.
    """

    n_neurons: tuple = (8, 8, 1)
    activations: tuple = ("relu", "relu", "linear")
    n_weight_basis: int = 5
    weight_basis_order: int = 4
    learning_rate: float = 0.01
    batch_size: int = 64
    max_epochs: int = 1000
    patience: int = 20
    lr_decay: float = 1.0
    quadrature: str = "simpson"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_neurons", tuple(int(k) for k in self.n_neurons))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.n_neurons) != len(self.activations):
            raise ConfigurationError("need one activation per layer")
        if not self.n_neurons or self.n_neurons[-1] != 1:
            raise ConfigurationError("the final layer must have width 1")
        if any(k < 1 for k in self.n_neurons):
            raise ConfigurationError("layer widths must be positive")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {name!r}")
        if self.n_weight_basis < 1:
            raise ConfigurationError("need at least one weight basis function")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigurationError("invalid training hyperparameters")

    @property
    def weight_basis(self) -> BSplineBasis:
        return BSplineBasis(self.weight_basis_order, self.n_weight_basis)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["n_neurons"] = list(self.n_neurons)
        doc["activations"] = list(self.activations)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "FnnConfig":
        return cls(**doc)


@dataclass
class Network:
    """Dense feed-forward stack; ``weights[j]`` has shape ``(n_out, n_in)``."""

    weights: list
    biases: list
    activations: tuple

    @classmethod
    def initialize(cls, n_inputs: int, n_neurons, activations, rng) -> "Network":
        weights, biases = [], []
        fan_in = n_inputs
        for width in n_neurons:
            weights.append(xavier_uniform(fan_in, width, rng))
            biases.append(np.zeros(width))
            fan_in = width
        return cls(weights, biases, tuple(activations))

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def forward(self, x: np.ndarray, keep: bool = False):
        """Network output ``(n,)``; with ``keep`` also the per-layer cache."""
        h = x
        cache = []
        for j, (w, b, name) in enumerate(zip(self.weights, self.biases, self.activations)):
            with np.errstate(over="ignore", invalid="ignore"):
                a = h @ w.T + b
                h_next = activate(name, a)
            if not np.all(np.isfinite(h_next)):
                raise NumericError(f"non-finite activation in layer {j + 1}")
            if keep:
                cache.append((h, a, h_next))
            h = h_next
        out = h[:, 0]
        return (out, cache) if keep else out

    def gradient(self, x: np.ndarray, y: np.ndarray):
        """Batch-mean squared error and its exact gradients.

        Returns ``(loss, grad_weights, grad_biases)``.
        """
        out, cache = self.forward(x, keep=True)
        resid = out - y
        loss = float(np.mean(resid**2))
        dh = (2.0 / y.size) * resid[:, None]
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.weights)
        for j in range(len(self.weights) - 1, -1, -1):
            h_in, a, h_out = cache[j]
            da = activation_backward(self.activations[j], a, h_out, dh)
            grad_w[j] = da.T @ h_in
            grad_b[j] = da.sum(axis=0)
            if j > 0:
                dh = da @ self.weights[j]
        return loss, grad_w, grad_b

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for j in range(len(self.weights)):
            for arr in (self.weights[j], self.biases[j]):
                arr[...] = flat[pos : pos + arr.size].reshape(arr.shape)
                pos += arr.size

    def to_dict(self) -> dict:
        return {
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        return cls(
            [np.asarray(w, float) for w in doc["weights"]],
            [np.asarray(b, float) for b in doc["biases"]],
            tuple(doc["activations"]),
        )


class Adam:
    def __init__(self, params, learning_rate: float):
        self.params = params
        self.lr = learning_rate
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    validation_mse: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def train_network(net: Network, x_train, y_train, x_val, y_val, config: FnnConfig):
    """Adam on mini-batches with early stopping on validation MSE.

    Returns a copy of the network at the best validation epoch (1-based
    epoch numbers in the history) and the :class:`TrainHistory`.
    """
    net = net.copy()
    y_train = np.asarray(y_train, float)
    y_val = np.asarray(y_val, float)
    rng = np.random.default_rng([config.seed, 1])
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    adam = Adam(params, config.learning_rate)
    history = TrainHistory()
    best = (np.inf, net.copy())
    since_best = 0
    n = y_train.size
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, n, config.batch_size):
                    idx = order[start : start + config.batch_size]
                    _, gw, gb = net.gradient(x_train[idx], y_train[idx])
                    adam.step([g for pair in zip(gw, gb) for g in pair])
            with np.errstate(over="ignore", invalid="ignore"):
                train_mse = float(np.mean((net.forward(x_train) - y_train) ** 2))
                val_mse = float(np.mean((net.forward(x_val) - y_val) ** 2))
        except NumericError as exc:
            history.stopped_epoch = epoch
            raise TrainingDivergedError(f"training diverged at epoch {epoch}: {exc}", history) from exc
        history.train_mse.append(train_mse)
        history.validation_mse.append(val_mse)
        history.stopped_epoch = epoch
        if not np.isfinite(val_mse):
            raise TrainingDivergedError(f"validation MSE is not finite at epoch {epoch}", history)
        if val_mse < best[0]:
            best = (val_mse, net.copy())
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
        adam.lr *= config.lr_decay
    return best[1], history


def precompute_functional_features(values, weight_basis: BSplineBasis, rule: QuadratureRule) -> np.ndarray:
    """Integrals ``int zeta_m(t) X_p(t) dt``, shape ``(n, P, M)``."""
    values = as_grid_values(values, rule.grid)
    zeta = weight_basis.evaluate(rule.grid)
    return np.einsum("npc,cm,c->npm", values, zeta, rule.weights)


@dataclass
class FnnModel:
    """Functional network: feature map followed by a dense :class:`Network`.

    Layer 1 of ``network`` acts on ``[features (P*M), scalar covariates (J)]``;
    its first ``P*M`` weight columns are the functional-weight coefficients.
    """

    config: FnnConfig
    network: Network
    rule: QuadratureRule
    n_covariates: int = 1
    n_scalar: int = 0

    @property
    def weight_basis(self) -> BSplineBasis:
        return self.config.weight_basis

    @property
    def c(self) -> np.ndarray:
        """Functional-weight coefficients ``(n1, P, M)`` (a view)."""
        M = self.config.n_weight_basis
        w1 = self.network.weights[0]
        return w1[:, : self.n_covariates * M].reshape(w1.shape[0], self.n_covariates, M)

    def inputs(self, values, z=None) -> np.ndarray:
        feats = precompute_functional_features(values, self.weight_basis, self.rule)
        feats = feats.reshape(feats.shape[0], -1)
        if self.n_scalar:
            if z is None:
                raise ConfigurationError("model expects scalar covariates")
            feats = np.column_stack([feats, np.asarray(z, float).reshape(feats.shape[0], -1)])
        return feats

    def predict(self, values, z=None) -> np.ndarray:
        return self.network.forward(self.inputs(values, z))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "weight_basis": self.weight_basis.to_dict(),
            "network": self.network.to_dict(),
            "rule": self.rule.to_dict(),
            "n_covariates": self.n_covariates,
            "n_scalar": self.n_scalar,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FnnModel":
        return cls(
            FnnConfig.from_dict(doc["config"]),
            Network.from_dict(doc["network"]),
            QuadratureRule.from_dict(doc["rule"]),
            int(doc["n_covariates"]),
            int(doc["n_scalar"]),
        )


def init_fnn(config: FnnConfig, grid, n_covariates: int = 1, n_scalar: int = 0) -> FnnModel:
    """Xavier-uniform weights (functional coefficients included), zero biases."""
    rule = quadrature_weights(grid, config.quadrature)
    n_inputs = n_covariates * config.n_weight_basis + n_scalar
    rng = np.random.default_rng([config.seed, 0])
    net = Network.initialize(n_inputs, config.n_neurons, config.activations, rng)
    return FnnModel(config, net, rule, n_covariates, n_scalar)


def first_layer_parameter_count(model: FnnModel) -> int:
    return model.network.weights[0].size + model.network.biases[0].size


def forward(model: FnnModel, values, z=None, keep: bool = False):
    return model.network.forward(model.inputs(values, z), keep=keep)


def gradient(model: FnnModel, values, y, z=None):
    """Batch-mean MSE and gradients ``(loss, grad_weights, grad_biases)``.

    The first entry of ``grad_weights`` holds the gradient with respect to
    the functional-weight coefficients (reshape with :attr:`FnnModel.c`'s
    layout) and the scalar-covariate weights.
    """
    return model.network.gradient(model.inputs(values, z), np.asarray(y, float))


@dataclass
class FnnData:
    """Standardized covariate grid values ``(n, P, C)``, response, scalars."""

    values: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None

    def __len__(self) -> int:
        return np.asarray(self.y).size

    def subset(self, idx) -> "FnnData":
        return FnnData(self.values[idx], self.y[idx], None if self.z is None else self.z[idx])


def train(model: FnnModel, train_set: FnnData, validation_set: FnnData, config: FnnConfig | None = None):
    """Train with Adam and early stopping; returns ``(best model, history)``."""
    config = config or model.config
    x_tr = model.inputs(train_set.values, train_set.z)
    x_val = model.inputs(validation_set.values, validation_set.z)
    net, history = train_network(model.network, x_tr, train_set.y, x_val, validation_set.y, config)
    return replace(model, network=net, config=config), history


def fit_fnn(config: FnnConfig, train_set: FnnData, validation_set: FnnData, grid):
    """Initialize and train in one call."""
    values = as_grid_values(train_set.values, grid)
    J = 0 if train_set.z is None else np.asarray(train_set.z).reshape(len(train_set), -1).shape[1]
    model = init_fnn(config, grid, values.shape[1], J)
    return train(model, train_set, validation_set, config)


def functional_weights(model: FnnModel, grid=None) -> np.ndarray:
    """Average functional weight ``sum_k gamma_kp(t) / n1``, shape ``(P, len(grid))``."""
    grid = model.rule.grid if grid is None else np.asarray(grid, float)
    zeta = model.weight_basis.evaluate(grid)
    return np.einsum("kpm,cm->pc", model.c, zeta) / model.c.shape[0]


def fold_assignment(n: int, n_folds: int, seed: int) -> np.ndarray:
    """Fold label per observation, balanced and seed-deterministic."""
    perm = np.random.default_rng([seed, 7]).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % n_folds
    return folds


def derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def tune_hyperparameters(
    grid_configs,
    data: FnnData,
    grid,
    validation: FnnData | None = None,
    n_folds: int = 5,
    seed: int = 0,
):
    """Grid search with k-fold cross-validated MSE.

    Each (config, fold) run gets its own seed derived from
    ``(seed, fold, config index)``. Early stopping uses ``validation`` when
    given, otherwise a fixed fifth of the training folds.

    Returns ``(best_config, table)``; each table row holds the config, its
    parameter count, the CV-MSE and the out-of-fold predictions.
    """
    grid_configs = list(grid_configs)
    if not grid_configs:
        raise ConfigurationError("hyperparameter grid is empty")
    if len(data) < 50:
        log.warning("cross-validation on fewer than 50 observations")
    folds = fold_assignment(len(data), n_folds, seed)
    table = []
    for ci, config in enumerate(grid_configs):
        preds = np.full(len(data), np.nan)
        diverged = False
        n_params = None
        for b in range(n_folds):
            run_config = replace(config, seed=derived_seed(seed, b, ci))
            held = folds == b
            fit_idx = np.flatnonzero(~held)
            if validation is None:
                inner = np.random.default_rng([run_config.seed, 2]).permutation(fit_idx)
                n_val = max(1, fit_idx.size // 5)
                val_set, fit_idx = data.subset(inner[:n_val]), inner[n_val:]
            else:
                val_set = validation
            try:
                model, _ = fit_fnn(run_config, data.subset(fit_idx), val_set, grid)
                n_params = model.network.n_parameters
                preds[held] = model.predict(data.values[held], None if data.z is None else data.z[held])
            except TrainingDivergedError:
                diverged = True
                break
        if n_params is None:
            n_params = init_fnn(config, grid, as_grid_values(data.values, grid).shape[1]).network.n_parameters
        cv_mse = np.inf if diverged else float(np.sum((preds - data.y) ** 2) / len(data))
        table.append(
            {"index": ci, "config": config, "n_parameters": n_params, "cv_mse": cv_mse, "predictions": preds, "diverged": diverged}
        )
    best = min(table, key=lambda row: (row["cv_mse"], row["n_parameters"], row["index"]))
    return best["config"], table


def clone(model: FnnModel) -> FnnModel:
    return copy.deepcopy(model)
