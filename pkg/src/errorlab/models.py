"""From-scratch regression models with a uniform fit/predict contract.

Three trainable families (ridge, knn, mlp) plus an oracle wrapper around a
world's true function.  Fitting canonicalizes the training-row order
(lexicographic by features, then label) so fits are bit-for-bit invariant
to input row permutation; the knn tie rule refers to this canonical order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, FitError, InvalidSpecError, SingularSystemError
from .seeding import rng_for
from .worldgen import SampleBundle, World

MODEL_FAMILIES = ("ridge", "knn", "mlp", "oracle")
REGIMES = ("OO", "TO", "TT", "ORACLE")
ACTIVATIONS = ("tanh", "relu", "identity")

MODEL_JSON_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Hyperparameters for one model family.

    Only the fields of the chosen family matter; the rest keep defaults.
    mlp weights initialize uniformly in +-1/sqrt(fan_in) (biases at zero)
    from ``init_seed``, and mini-batch order is reshuffled each epoch from
    the same seed, so training is fully deterministic.
    """

    family: str = "ridge"
    lam: float = 0.0
    k: int = 5
    widths: tuple[int, ...] = (16,)
    activation: str = "tanh"
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    init_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def validate(self) -> "ModelSpec":
        if self.family not in MODEL_FAMILIES:
            raise InvalidSpecError(f"model.family: unknown family {self.family!r}")
        if self.lam < 0:
            raise InvalidSpecError("model.lam: ridge penalty must be nonnegative")
        if self.k < 1:
            raise InvalidSpecError("model.k: knn needs k >= 1")
        if any(w < 1 for w in self.widths):
            raise InvalidSpecError("model.widths: layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"model.activation: unknown activation {self.activation!r}")
        if self.epochs < 1:
            raise InvalidSpecError("model.epochs: must be >= 1")
        if self.batch_size < 1:
            raise InvalidSpecError("model.batch_size: must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidSpecError("model.learning_rate: must be positive")
        return self


@dataclass
class FittedModel:
    """An immutable fitted predictor; ``predict`` is deterministic."""

    spec: ModelSpec
    regime: str
    input_dim: int
    params: dict
    diagnostics: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict(self, x)


@dataclass(frozen=True)
class RegimeModels:
    """Fitted predictors for the three information regimes plus the oracle."""

    oo: FittedModel
    to: FittedModel
    tt: FittedModel
    oracle: FittedModel

    def by_regime(self, regime: str) -> FittedModel:
        return {"OO": self.oo, "TO": self.to, "TT": self.tt, "ORACLE": self.oracle}[regime]


def canonical_row_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sort order by features (first column primary) then label."""
    keys = (y,) + tuple(x[:, j] for j in range(x.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def _check_training_arrays(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"x must be 2-d, got shape {x.shape}")
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DimensionError(f"y of shape {y.shape} does not match x of shape {x.shape}")
    return x, y


# ---------------------------------------------------------------------------
# ridge


def _fit_ridge(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> tuple[dict, dict]:
    order = canonical_row_order(x, y)
    x = x[order]
    y = y[order]
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + spec.lam * np.eye(x.shape[1])
    if spec.lam == 0.0:
        try:
            np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                "ridge with lam=0 on a rank-deficient design; add regularization "
                "or remove collinear features"
            ) from exc
    coef = np.linalg.solve(gram, xc.T @ yc)
    intercept = y_mean - float(x_mean @ coef)
    residuals = y - (x @ coef + intercept)
    params = {"coef": coef, "intercept": intercept}
    diagnostics = {"final_loss": float(np.mean(residuals**2)), "iterations": 1}
    return params, diagnostics


def _predict_ridge(model: FittedModel, x: np.ndarray) -> np.ndarray:
    return x @ model.params["coef"] + model.params["intercept"]


# ---------------------------------------------------------------------------
# knn

_KNN_CHUNK = 256


def _fit_knn(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> tuple[dict, dict]:
    if x.shape[0] < spec.k:
        raise FitError(f"knn needs at least k={spec.k} training rows, got {x.shape[0]}")
    order = canonical_row_order(x, y)
    x = x[order]
    y = y[order]
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    params = {
        "train_x_std": (x - mean) / sd,
        "train_y": y,
        "mean": mean,
        "sd": sd,
        "k": spec.k,
    }
    diagnostics = {"final_loss": None, "iterations": 0}
    return params, diagnostics


def _predict_knn(model: FittedModel, x: np.ndarray) -> np.ndarray:
    train = model.params["train_x_std"]
    labels = model.params["train_y"]
    k = model.params["k"]
    queries = (x - model.params["mean"]) / model.params["sd"]
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], _KNN_CHUNK):
        chunk = queries[start : start + _KNN_CHUNK]
        # Explicit differences keep exactly-equal distances exactly equal,
        # so the stable sort's lower-canonical-index tie rule is honest.
        dist_sq = np.sum((chunk[:, None, :] - train[None, :, :]) ** 2, axis=2)
        nearest = np.argsort(dist_sq, axis=1, kind="stable")[:, :k]
        # Average in canonical index order so equal neighbor sets produce
        # bitwise-equal means (k = n then gives the global mean everywhere).
        out[start : start + _KNN_CHUNK] = labels[np.sort(nearest, axis=1)].mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# mlp

_ACT = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(float)),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def mlp_init_params(spec: ModelSpec, input_dim: int) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = rng_for(spec.init_seed, "mlp/init")
    sizes = [input_dim, *spec.widths, 1]
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (fan_in, fan_out))
        params.append((w, np.zeros(fan_out)))
    return params


def _mlp_forward(
    params: list[tuple[np.ndarray, np.ndarray]], activation: str, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    act, _ = _ACT[activation]
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = [x]
    h = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        pre.append(z)
        h = act(z) if i < last else z
        post.append(h)
    return pre, post


def mlp_predict_params(
    params: list[tuple[np.ndarray, np.ndarray]], activation: str, x: np.ndarray
) -> np.ndarray:
    _, post = _mlp_forward(params, activation, x)
    return post[-1][:, 0]


def mlp_loss_and_gradients(
    params: list[tuple[np.ndarray, np.ndarray]],
    activation: str,
    x: np.ndarray,
    y: np.ndarray,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean-squared-error loss and its analytic gradient for every parameter."""
    _, dact = _ACT[activation]
    pre, post = _mlp_forward(params, activation, x)
    resid = post[-1][:, 0] - y
    loss = float(np.mean(resid**2))
    delta = (2.0 / y.shape[0]) * resid[:, None]
    grads: list[Optional[tuple[np.ndarray, np.ndarray]]] = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        grads[i] = (post[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            w, _ = params[i]
            delta = (delta @ w.T) * dact(pre[i - 1])
    return loss, grads  # type: ignore[return-value]


def _fit_mlp(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> tuple[dict, dict]:
    if x.shape[0] < spec.batch_size:
        raise FitError(
            f"mlp needs at least batch_size={spec.batch_size} training rows, got {x.shape[0]}"
        )
    order = canonical_row_order(x, y)
    x = x[order]
    y = y[order]
    n = x.shape[0]
    params = mlp_init_params(spec, x.shape[1])
    shuffler = rng_for(spec.init_seed, "mlp/batches")
    epoch_losses = []
    iterations = 0
    for _ in range(spec.epochs):
        perm = shuffler.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = perm[start : start + spec.batch_size]
            _, grads = mlp_loss_and_gradients(params, spec.activation, x[idx], y[idx])
            params = [
                (w - spec.learning_rate * gw, b - spec.learning_rate * gb)
                for (w, b), (gw, gb) in zip(params, grads)
            ]
            iterations += 1
        epoch_losses.append(
            float(np.mean((mlp_predict_params(params, spec.activation, x) - y) ** 2))
        )
    model_params = {"layers": params}
    diagnostics = {
        "final_loss": epoch_losses[-1],
        "iterations": iterations,
        "epoch_losses": epoch_losses,
    }
    return model_params, diagnostics


def _predict_mlp(model: FittedModel, x: np.ndarray) -> np.ndarray:
    return mlp_predict_params(model.params["layers"], model.spec.activation, x)


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_deviation: float
    step: float
    n_parameters: int


def check_gradients(
    spec: ModelSpec, x: np.ndarray, y: np.ndarray, step: float = 1e-6
) -> GradientCheckReport:
    """Compare the mlp analytic gradient against central finite differences.

    Runs at the spec's initial parameters on the full probe batch.
    """
    spec.validate()
    if spec.family != "mlp":
        raise InvalidSpecError("check_gradients applies to the mlp family only")
    x, y = _check_training_arrays(x, y)
    params = mlp_init_params(spec, x.shape[1])
    _, analytic = mlp_loss_and_gradients(params, spec.activation, x, y)

    def loss_at(flat: np.ndarray) -> float:
        rebuilt = []
        offset = 0
        for w, b in params:
            w_new = flat[offset : offset + w.size].reshape(w.shape)
            offset += w.size
            b_new = flat[offset : offset + b.size]
            offset += b.size
            rebuilt.append((w_new, b_new))
        pred = mlp_predict_params(rebuilt, spec.activation, x)
        return float(np.mean((pred - y) ** 2))

    flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])
    flat_analytic = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in analytic])
    max_rel = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        up = loss_at(bumped)
        bumped[i] = flat[i] - step
        down = loss_at(bumped)
        fd = (up - down) / (2.0 * step)
        denom = max(abs(fd), abs(flat_analytic[i]), 1e-8)
        max_rel = max(max_rel, abs(fd - flat_analytic[i]) / denom)
    return GradientCheckReport(
        max_relative_deviation=max_rel, step=step, n_parameters=int(flat.size)
    )


# ---------------------------------------------------------------------------
# uniform contract


def oracle_model(world: World) -> FittedModel:
    """Wrap the world's true function as a fitted predictor."""
    return FittedModel(
        spec=ModelSpec(family="oracle"),
        regime="ORACLE",
        input_dim=world.input_dim,
        params={"world": world},
        diagnostics={"final_loss": 0.0, "iterations": 0},
    )


def fit(spec: ModelSpec, x: np.ndarray, y: np.ndarray, regime: str = "OO") -> FittedModel:
    spec.validate()
    if regime not in REGIMES:
        raise InvalidSpecError(f"unknown training regime {regime!r}")
    if spec.family == "oracle":
        raise InvalidSpecError("oracle models wrap a World; use oracle_model(world)")
    x, y = _check_training_arrays(x, y)
    if x.shape[0] < 1:
        raise FitError("training data is empty")
    if spec.family == "ridge":
        params, diagnostics = _fit_ridge(spec, x, y)
    elif spec.family == "knn":
        params, diagnostics = _fit_knn(spec, x, y)
    else:
        params, diagnostics = _fit_mlp(spec, x, y)
    return FittedModel(
        spec=spec, regime=regime, input_dim=x.shape[1], params=params, diagnostics=diagnostics
    )


def predict(model: FittedModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"x must be 2-d, got shape {x.shape}")
    if x.shape[1] != model.input_dim:
        raise DimensionError(
            f"model expects {model.input_dim} feature columns, got {x.shape[1]}"
        )
    family = model.spec.family
    if family == "ridge":
        return _predict_ridge(model, x)
    if family == "knn":
        return _predict_knn(model, x)
    if family == "mlp":
        return _predict_mlp(model, x)
    return model.params["world"].f_star.values(x)


def fit_regimes(world: World, bundle: SampleBundle, spec: ModelSpec) -> RegimeModels:
    """Fit the spec under each information regime on identical row indices.

    OO trains on (x_observed, y_observed), TO on (x_true, y_observed), TT on
    (x_true, y_true); all three use the bundle's selected rows.
    """
    rows = bundle.selected
    views = {
        "OO": (bundle.x_observed[rows], bundle.y_observed[rows]),
        "TO": (bundle.x_true[rows], bundle.y_observed[rows]),
        "TT": (bundle.x_true[rows], bundle.y_true[rows]),
    }
    fitted = {}
    for regime, (x, y) in views.items():
        try:
            fitted[regime] = fit(spec, x, y, regime=regime)
        except (FitError, DimensionError) as exc:
            raise type(exc)(f"regime {regime}: {exc}") from exc
    return RegimeModels(
        oo=fitted["OO"], to=fitted["TO"], tt=fitted["TT"], oracle=oracle_model(world)
    )


# ---------------------------------------------------------------------------
# serialization


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    return value


def model_to_json(model: FittedModel) -> str:
    """Serialize to a versioned JSON document; floats round-trip exactly."""
    spec = model.spec
    doc = {
        "schema_version": MODEL_JSON_VERSION,
        "family": spec.family,
        "regime": model.regime,
        "input_dim": model.input_dim,
        "spec": {
            "family": spec.family,
            "lam": spec.lam,
            "k": spec.k,
            "widths": list(spec.widths),
            "activation": spec.activation,
            "learning_rate": spec.learning_rate,
            "epochs": spec.epochs,
            "batch_size": spec.batch_size,
            "init_seed": spec.init_seed,
        },
        "diagnostics": _to_builtin(model.diagnostics),
    }
    if spec.family == "ridge":
        doc["params"] = {
            "coef": model.params["coef"].tolist(),
            "intercept": model.params["intercept"],
        }
    elif spec.family == "knn":
        doc["params"] = {
            "train_x_std": model.params["train_x_std"].tolist(),
            "train_y": model.params["train_y"].tolist(),
            "mean": model.params["mean"].tolist(),
            "sd": model.params["sd"].tolist(),
            "k": model.params["k"],
        }
    elif spec.family == "mlp":
        doc["params"] = {
            "layers": [[w.tolist(), b.tolist()] for w, b in model.params["layers"]]
        }
    else:
        raise InvalidSpecError("oracle models serialize with their World, not standalone")
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> FittedModel:
    doc = json.loads(text)
    if doc.get("schema_version") != MODEL_JSON_VERSION:
        raise InvalidSpecError(
            f"unsupported model schema_version {doc.get('schema_version')!r}"
        )
    s = doc["spec"]
    spec = ModelSpec(
        family=s["family"],
        lam=s["lam"],
        k=s["k"],
        widths=tuple(s["widths"]),
        activation=s["activation"],
        learning_rate=s["learning_rate"],
        epochs=s["epochs"],
        batch_size=s["batch_size"],
        init_seed=s["init_seed"],
    )
    raw = doc["params"]
    if spec.family == "ridge":
        params = {"coef": np.asarray(raw["coef"], dtype=float), "intercept": raw["intercept"]}
    elif spec.family == "knn":
        params = {
            "train_x_std": np.asarray(raw["train_x_std"], dtype=float),
            "train_y": np.asarray(raw["train_y"], dtype=float),
            "mean": np.asarray(raw["mean"], dtype=float),
            "sd": np.asarray(raw["sd"], dtype=float),
            "k": raw["k"],
        }
    else:
        params = {
            "layers": [
                (np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in raw["layers"]
            ]
        }
    return FittedModel(
        spec=spec,
        regime=doc["regime"],
        input_dim=doc["input_dim"],
        params=params,
        diagnostics=doc["diagnostics"],
    )
