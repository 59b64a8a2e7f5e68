"""Trainable learners behind one predictor interface.

A PredictorHandle is a deterministic, serializable mapping from feature
vectors to predictions. Learners (ols, knn, mlp) produce handles; the
analytic simulator produces oracle handles of the same shape. Subset refits
are cached because fair-contribution scores enumerate up to 2^n of them.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import FeatureSpec, select_features
from .errors import IncompatibleLoss, SchemaMismatch, SingularDesign
from ._util import derive_seed


class LossFunction(str, Enum):
    MSE = "mse"
    MAE = "mae"
    ZERO_ONE = "zero_one"
    KL = "kl"


REGRESSION_LOSSES = (LossFunction.MSE, LossFunction.MAE)
CLASSIFICATION_LOSSES = (LossFunction.ZERO_ONE, LossFunction.KL)


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters of one learner; fixed a priori, never searched."""

    learner: str
    seed: int = 0
    # knn
    knn_k: int = 5
    distance: str = "euclidean_standardized"
    # mlp
    hidden: tuple = (32, 16, 8)
    learning_rate: float = 0.01
    lr_decay: float = 0.5
    epochs: int = 300
    batch_size: int = 32

    def __post_init__(self):
        if self.learner not in ("ols", "knn", "mlp"):
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.learner == "mlp" and len(self.hidden) < 1:
            raise ValueError("mlp needs at least one hidden layer")
        if self.learner == "knn" and self.knn_k < 1:
            raise ValueError("knn_k must be positive")
        if self.distance not in ("euclidean_standardized", "gower"):
            raise ValueError(f"unknown distance {self.distance!r}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    def key(self):
        return (self.learner, self.seed, self.knn_k, self.distance, self.hidden,
                self.learning_rate, self.lr_decay, self.epochs, self.batch_size)

    def to_dict(self):
        return {"learner": self.learner, "seed": self.seed, "knn_k": self.knn_k,
                "distance": self.distance, "hidden": list(self.hidden),
                "learning_rate": self.learning_rate, "lr_decay": self.lr_decay,
                "epochs": self.epochs, "batch_size": self.batch_size}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


# -- feature encoding --------------------------------------------------------


def build_encoder(features, rows, standardize=False):
    """Per-feature encoding plan: numeric passthrough (optionally z-scored),
    categorical one-hot. Serializable alongside the model parameters."""
    encoder = []
    for j, spec in enumerate(features):
        if spec.kind == "categorical":
            encoder.append({"type": "onehot", "categories": list(spec.categories)})
        else:
            col = np.asarray(rows[:, j], dtype=float)
            mean = float(np.mean(col)) if standardize else 0.0
            scale = float(np.std(col)) if standardize else 1.0
            encoder.append({"type": "numeric", "mean": mean, "scale": scale if scale > 0 else 1.0})
    return encoder


def encode(rows, encoder):
    """Apply an encoding plan to a (k, n) row matrix; returns float64."""
    rows = np.asarray(rows)
    cols = []
    for j, enc in enumerate(encoder):
        if enc["type"] == "numeric":
            col = np.asarray(rows[:, j], dtype=float)
            cols.append(((col - enc["mean"]) / enc["scale"])[:, None])
        else:
            cats = enc["categories"]
            onehot = np.zeros((rows.shape[0], len(cats)))
            for c, cat in enumerate(cats):
                onehot[:, c] = [1.0 if v == cat else 0.0 for v in rows[:, j]]
            cols.append(onehot)
    return np.concatenate(cols, axis=1) if cols else np.zeros((rows.shape[0], 0))


def feature_ranges(rows, features):
    """Per-feature value ranges (numeric) used by the Gower metric."""
    ranges = []
    for j, spec in enumerate(features):
        if spec.kind == "categorical":
            ranges.append(0.0)
        else:
            col = np.asarray(rows[:, j], dtype=float)
            ranges.append(float(col.max() - col.min()))
    return ranges


def gower_distances(rows, x, features, ranges):
    """Gower distance of every row to x: range-normalized absolute difference
    for numeric features, 0/1 mismatch for categorical; averaged."""
    rows = np.asarray(rows)
    k = rows.shape[0]
    acc = np.zeros(k)
    for j, spec in enumerate(features):
        if spec.kind == "categorical":
            acc += np.array([0.0 if v == x[j] else 1.0 for v in rows[:, j]])
        else:
            col = np.asarray(rows[:, j], dtype=float)
            r = ranges[j]
            diff = np.abs(col - float(x[j]))
            acc += diff / r if r > 0 else (diff > 0).astype(float)
    return acc / max(len(features), 1)


# -- predictor handle --------------------------------------------------------


@dataclass
class PredictorHandle:
    """Pure view of a trained or oracle model.

    `kind` names the evaluator in _EVALUATORS; `params` is its serializable
    parameter block. Evaluation of identical inputs is bit-identical.
    """

    input_schema: list
    output_kind: str
    kind: str
    params: dict
    metadata: dict = field(default_factory=dict)

    def predict_batch(self, rows):
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != len(self.input_schema):
            raise SchemaMismatch(
                f"expected {len(self.input_schema)} features, got shape {rows.shape}",
                operation="predict")
        return _EVALUATORS[self.kind](self.params, rows)

    def predict(self, x):
        x = list(x)
        if len(x) != len(self.input_schema):
            raise SchemaMismatch(
                f"expected {len(self.input_schema)} features, got {len(x)}",
                operation="predict")
        for j, spec in enumerate(self.input_schema):
            if spec.kind == "categorical" and x[j] not in spec.categories:
                raise SchemaMismatch(
                    f"feature {spec.name!r}: {x[j]!r} not in categories", operation="predict")
        has_cat = any(f.kind == "categorical" for f in self.input_schema)
        row = np.array([x], dtype=object if has_cat else float)
        out = self.predict_batch(row)
        return np.array(out[0]) if self.output_kind == "distribution" else float(out[0])

    def to_dict(self):
        params = {}
        for key, value in self.params.items():
            params[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return {"input_schema": [f.to_dict() for f in self.input_schema],
                "output_kind": self.output_kind, "kind": self.kind,
                "params": params, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d):
        return cls(input_schema=[FeatureSpec.from_dict(f) for f in d["input_schema"]],
                   output_kind=d["output_kind"], kind=d["kind"],
                   params=d["params"], metadata=d.get("metadata", {}))


def _eval_constant(params, rows):
    return np.full(rows.shape[0], float(params["value"]))


def _eval_constant_distribution(params, rows):
    dist = np.asarray(params["dist"], dtype=float)
    return np.tile(dist, (rows.shape[0], 1))


def _eval_linear(params, rows):
    design = encode(rows, params["encoder"])
    return design @ np.asarray(params["coef"], dtype=float) + float(params["intercept"])


def _eval_mlp(params, rows):
    a = encode(rows, params["encoder"])
    weights, biases = params["weights"], params["biases"]
    for layer in range(len(weights) - 1):
        a = np.maximum(a @ np.asarray(weights[layer], dtype=float)
                       + np.asarray(biases[layer], dtype=float), 0.0)
    out = a @ np.asarray(weights[-1], dtype=float) + np.asarray(biases[-1], dtype=float)
    return out[:, 0]


def _eval_knn(params, rows):
    train = np.asarray(params["train_matrix"], dtype=object if params["distance"] == "gower" else float)
    targets = np.asarray(params["train_targets"], dtype=float)
    k = int(params["k"])
    out = np.empty(rows.shape[0])
    if params["distance"] == "gower":
        features = [FeatureSpec.from_dict(f) for f in params["features"]]
        for i in range(rows.shape[0]):
            dist = gower_distances(train, rows[i], features, params["ranges"])
            nearest = np.argsort(dist, kind="stable")[:k]
            out[i] = _knn_aggregate(targets[nearest], params["agg"])
    else:
        encoded = encode(rows, params["encoder"])
        train_enc = np.asarray(params["train_encoded"], dtype=float)
        for i in range(rows.shape[0]):
            dist = np.sqrt(((train_enc - encoded[i]) ** 2).sum(axis=1))
            nearest = np.argsort(dist, kind="stable")[:k]
            out[i] = _knn_aggregate(targets[nearest], params["agg"])
    return out


def _knn_aggregate(values, agg):
    if agg == "mode":
        levels, counts = np.unique(values, return_counts=True)
        return levels[np.argmax(counts)]
    return float(np.mean(values))


def _eval_poly_response(params, rows):
    x = np.asarray(rows, dtype=float)
    out = np.full(x.shape[0], float(params["intercept"]))
    for term in params["terms"]:
        contrib = np.full(x.shape[0], float(term["coef"]))
        for idx, power in term["powers"].items():
            contrib = contrib * x[:, int(idx)] ** int(power)
        out += contrib
    return out


def _table_lookup(params, rows):
    x_levels = [np.asarray(l, dtype=float) for l in params["x_levels"]]
    cond = np.asarray(params["cond"], dtype=float)  # (#configs, #y_levels)
    x = np.asarray(rows, dtype=float)
    flat = np.zeros(x.shape[0], dtype=int)
    for j, levels in enumerate(x_levels):
        codes = np.searchsorted(levels, x[:, j])
        codes = np.clip(codes, 0, len(levels) - 1)
        if not np.allclose(levels[codes], x[:, j]):
            raise SchemaMismatch(f"value outside the discrete grid in column {j}",
                                 operation="predict")
        flat = flat * len(levels) + codes
    return cond[flat]


def _eval_table_argmax(params, rows):
    cond = _table_lookup(params, rows)
    y_levels = np.asarray(params["y_levels"], dtype=float)
    return y_levels[np.argmax(cond, axis=1)]


def _eval_table_conditional(params, rows):
    return _table_lookup(params, rows)


_EVALUATORS = {
    "constant": _eval_constant,
    "constant_distribution": _eval_constant_distribution,
    "linear": _eval_linear,
    "mlp": _eval_mlp,
    "knn": _eval_knn,
    "poly_response": _eval_poly_response,
    "table_argmax": _eval_table_argmax,
    "table_conditional": _eval_table_conditional,
}


# -- losses ------------------------------------------------------------------


def pointwise_loss(loss, y_true, preds, y_levels=None):
    """Per-row loss values. For KL the empirical per-row loss is the log
    score -log q(y); EPE differences under it coincide with differences of
    the population KL risk, which is what the contribution scores use."""
    y_true = np.asarray(y_true, dtype=float)
    if loss == LossFunction.MSE:
        return (y_true - preds) ** 2
    if loss == LossFunction.MAE:
        return np.abs(y_true - preds)
    if loss == LossFunction.ZERO_ONE:
        return (y_true != np.asarray(preds, dtype=float)).astype(float)
    if loss == LossFunction.KL:
        levels = np.asarray(y_levels, dtype=float)
        idx = np.array([int(np.argmin(np.abs(levels - y))) for y in y_true])
        q = np.take_along_axis(np.asarray(preds, dtype=float), idx[:, None], axis=1)[:, 0]
        return -np.log(np.clip(q, 1e-300, None))
    raise IncompatibleLoss(f"unknown loss {loss}", operation="pointwise_loss")


def _check_output_compat(handle, loss, operation):
    needs_dist = loss == LossFunction.KL
    if needs_dist != (handle.output_kind == "distribution"):
        raise IncompatibleLoss(
            f"loss {loss.value} incompatible with {handle.output_kind} output",
            operation=operation)


def predict(handle, x):
    """Evaluate a handle on one feature vector (pure)."""
    return handle.predict(x)


def epe(handle, d, loss):
    """Empirical expected prediction error: mean loss over the rows of d."""
    if d.k == 0:
        raise ValueError("dataset is empty")
    _check_output_compat(handle, loss, "epe")
    preds = handle.predict_batch(d.rows)
    levels = handle.params.get("y_levels")
    return float(np.mean(pointwise_loss(loss, d.targets, preds, y_levels=levels)))


def model_distance(h1, h2, d, loss):
    """Monte Carlo distance between two models over the empirical feature
    distribution of d: mean of L(m1(x), m2(x))."""
    s1 = [(f.name, f.kind) for f in h1.input_schema]
    s2 = [(f.name, f.kind) for f in h2.input_schema]
    if s1 != s2:
        raise SchemaMismatch("handles do not share an input schema",
                             operation="model_distance")
    p1 = h1.predict_batch(d.rows)
    p2 = h2.predict_batch(d.rows)
    if loss == LossFunction.KL:
        p = np.clip(np.asarray(p1, dtype=float), 1e-300, None)
        q = np.clip(np.asarray(p2, dtype=float), 1e-300, None)
        per_row = np.sum(np.asarray(p1) * np.log(p / q), axis=1)
    else:
        per_row = pointwise_loss(loss, p1, p2)
    return float(np.mean(per_row))


# -- training ----------------------------------------------------------------


def _check_learner_loss(config, loss):
    ok = {"ols": (LossFunction.MSE,), "mlp": (LossFunction.MSE,),
          "knn": (LossFunction.MSE, LossFunction.ZERO_ONE)}[config.learner]
    if loss not in ok:
        raise IncompatibleLoss(f"{config.learner} does not train under {loss.value}",
                               operation="train")


def _solve_normal_equations(design, y):
    """Exact least squares; adds a 1e-8 ridge only on singularity."""
    gram = design.T @ design
    rhs = design.T @ y
    eigvals = np.linalg.eigvalsh(gram)
    singular = eigvals[0] <= 1e-10 * max(eigvals[-1], 1.0)
    if not singular:
        try:
            coef = np.linalg.solve(gram, rhs)
            if np.all(np.isfinite(coef)):
                return coef, False
        except np.linalg.LinAlgError:
            pass
    try:
        coef = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(f"normal equations unsolvable even with ridge: {exc}",
                             operation="train") from None
    if not np.all(np.isfinite(coef)):
        raise SingularDesign("ridge fallback produced non-finite coefficients",
                             operation="train")
    return coef, True


def _train_ols(config, d):
    encoder = []
    for j, spec in enumerate(d.features):
        if spec.kind == "categorical":
            # drop the first level; the intercept absorbs it
            encoder.append({"type": "onehot", "categories": list(spec.categories[1:])})
        else:
            encoder.append({"type": "numeric", "mean": 0.0, "scale": 1.0})
    design = encode(d.rows, encoder)
    design = np.concatenate([np.ones((d.k, 1)), design], axis=1)
    coef, ridged = _solve_normal_equations(design, d.targets)

    residuals = d.targets - design @ coef
    dof = max(d.k - design.shape[1], 1)
    sigma2 = float(residuals @ residuals) / dof
    try:
        cov = sigma2 * np.linalg.inv(design.T @ design + (1e-8 * np.eye(design.shape[1]) if ridged else 0))
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(design.shape[1], np.nan)

    params = {"intercept": float(coef[0]), "coef": coef[1:].tolist(), "encoder": encoder}
    meta = {"learner": "ols", "seed": config.seed, "ridge_fallback": ridged,
            "intercept_se": float(se[0]), "coef_se": se[1:].tolist(),
            "residual_variance": sigma2}
    return PredictorHandle(input_schema=list(d.features), output_kind="scalar",
                           kind="linear", params=params, metadata=meta)


def _train_knn(config, d, loss):
    if config.knn_k > d.k:
        raise ValueError(f"knn_k={config.knn_k} exceeds training size {d.k}")
    agg = "mode" if loss == LossFunction.ZERO_ONE else "mean"
    params = {"k": config.knn_k, "distance": config.distance, "agg": agg,
              "train_matrix": [list(r) for r in d.rows],
              "train_targets": d.targets.tolist(),
              "features": [f.to_dict() for f in d.features]}
    if config.distance == "gower":
        params["ranges"] = feature_ranges(d.rows, d.features)
    else:
        encoder = build_encoder(d.features, d.rows, standardize=True)
        params["encoder"] = encoder
        params["train_encoded"] = encode(d.rows, encoder).tolist()
    meta = {"learner": "knn", "seed": config.seed, "k": config.knn_k,
            "distance": config.distance}
    return PredictorHandle(input_schema=list(d.features), output_kind="scalar",
                           kind="knn", params=params, metadata=meta)


def _train_mlp(config, d):
    encoder = build_encoder(d.features, d.rows, standardize=True)
    X = encode(d.rows, encoder)
    y = d.targets
    rng = np.random.default_rng(derive_seed(config.seed, "mlp-init"))

    widths = [X.shape[1]] + list(config.hidden) + [1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / widths[i]), size=(widths[i], widths[i + 1]))
               for i in range(len(widths) - 1)]
    biases = [np.zeros(w) for w in widths[1:]]

    def forward(a):
        activations = [a]
        for layer in range(len(weights) - 1):
            a = np.maximum(a @ weights[layer] + biases[layer], 0.0)
            activations.append(a)
        activations.append(a @ weights[-1] + biases[-1])
        return activations

    def full_loss():
        return float(np.mean((forward(X)[-1][:, 0] - y) ** 2))

    lr = config.learning_rate
    batch = min(config.batch_size, d.k)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "mlp-shuffle"))
    prev_loss = full_loss()
    history = [prev_loss]
    for _epoch in range(config.epochs):
        saved = ([w.copy() for w in weights], [b.copy() for b in biases])
        order = shuffle_rng.permutation(d.k)
        for start in range(0, d.k, batch):
            idx = order[start:start + batch]
            acts = forward(X[idx])
            delta = 2.0 * (acts[-1][:, 0] - y[idx])[:, None] / len(idx)
            for layer in range(len(weights) - 1, -1, -1):
                grad_w = acts[layer].T @ delta
                grad_b = delta.sum(axis=0)
                if layer > 0:
                    delta = (delta @ weights[layer].T) * (acts[layer] > 0)
                weights[layer] -= lr * grad_w
                biases[layer] -= lr * grad_b
        new_loss = full_loss()
        if new_loss > prev_loss:
            # reject the epoch and halve the rate
            weights, biases = saved
            lr *= config.lr_decay
        else:
            prev_loss = new_loss
        history.append(prev_loss)

    params = {"weights": [w.tolist() for w in weights],
              "biases": [b.tolist() for b in biases], "encoder": encoder}
    meta = {"learner": "mlp", "seed": config.seed, "hidden": list(config.hidden),
            "epochs": config.epochs, "final_lr": lr, "loss_history": history}
    return PredictorHandle(input_schema=list(d.features), output_kind="scalar",
                           kind="mlp", params=params, metadata=meta)


def train(config, d, loss):
    """Fit a learner on d; deterministic given config.seed."""
    if d.k == 0:
        raise ValueError("training dataset is empty")
    _check_learner_loss(config, loss)
    if config.learner == "ols":
        return _train_ols(config, d)
    if config.learner == "knn":
        return _train_knn(config, d, loss)
    return _train_mlp(config, d)


# -- subset refits -----------------------------------------------------------

_subset_cache = {}
_subset_cache_lock = threading.Lock()


def clear_subset_cache():
    with _subset_cache_lock:
        _subset_cache.clear()


def best_constant(d, loss):
    """The optimal featureless predictor: mean (MSE), median (MAE), modal
    class (0-1), or the marginal label distribution (KL)."""
    if loss == LossFunction.MSE:
        return float(np.mean(d.targets))
    if loss == LossFunction.MAE:
        return float(np.median(d.targets))
    levels, counts = np.unique(d.targets, return_counts=True)
    if loss == LossFunction.ZERO_ONE:
        return float(levels[np.argmax(counts)])
    return levels, counts / counts.sum()


def subset_model(config, d, loss, subset):
    """Refit the learner on the feature subset only (cached).

    The empty subset returns the best constant for the loss; its input
    schema is empty, so it evaluates on zero-column row matrices.
    """
    subset = tuple(sorted(int(j) for j in subset))
    key = (config.key(), d.fingerprint, loss, subset)
    with _subset_cache_lock:
        hit = _subset_cache.get(key)
    if hit is not None:
        return hit

    if not subset:
        const = best_constant(d, loss)
        if loss == LossFunction.KL:
            levels, dist = const
            handle = PredictorHandle(
                input_schema=[], output_kind="distribution", kind="constant_distribution",
                params={"dist": dist.tolist(), "y_levels": levels.tolist()},
                metadata={"learner": "constant"})
        else:
            handle = PredictorHandle(
                input_schema=[], output_kind="scalar", kind="constant",
                params={"value": const}, metadata={"learner": "constant"})
    else:
        handle = train(config, select_features(d, subset), loss)

    with _subset_cache_lock:
        _subset_cache.setdefault(key, handle)
        return _subset_cache[key]
