"""Decomposition of prediction error into epistemic and aleatoric parts.

The pointwise decomposition expresses the true outcome as a chain of
pairwise model-output differences (model-approximation gain, measurement
gain from the target, measurement gain from the features) plus the current
prediction and the inherent noise; the chain collapses algebraically, so
the component sum must reproduce the true outcome to rounding error.  The
error decomposition is the same chain read from the prediction side, and
its components are exact negations of the corresponding gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import worldgen
from .errors import FitError, InvalidSpecError, InvariantError
from .models import FittedModel, ModelSpec, RegimeModels, fit, fit_regimes, predict
from .parallel import ordered_map
from .worldgen import SampleBundle, World

REL_TOL = 1e-9
ABS_TOL = 1e-9


@dataclass(frozen=True)
class PointwiseDecomposition:
    """Five components whose sum reproduces y_true."""

    model_approx_gain: float
    meas_gain_y: float
    meas_gain_x: float
    current_prediction: float
    aleatoric: float

    @property
    def total(self) -> float:
        return (
            self.model_approx_gain
            + self.meas_gain_y
            + self.meas_gain_x
            + self.current_prediction
            + self.aleatoric
        )


@dataclass(frozen=True)
class ErrorDecomposition:
    """Four components whose sum reproduces y_pred - y_true.

    ``aleatoric_term`` stores f_star(x_true) - y_true, i.e. the negated
    noise draw; that sign is forced by the chain collapsing exactly.
    """

    err_x: float
    err_y: float
    delta_f: float
    aleatoric_term: float

    @property
    def total(self) -> float:
        return self.err_x + self.err_y + self.delta_f + self.aleatoric_term


@dataclass
class DecompositionTable:
    """Vectorized decompositions for many rows at once."""

    model_approx_gain: np.ndarray
    meas_gain_y: np.ndarray
    meas_gain_x: np.ndarray
    current_prediction: np.ndarray
    aleatoric: np.ndarray
    err_x: np.ndarray
    err_y: np.ndarray
    delta_f: np.ndarray
    aleatoric_term: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray

    @property
    def n(self) -> int:
        return self.y_true.shape[0]

    def pointwise_sum(self) -> np.ndarray:
        return (
            self.model_approx_gain
            + self.meas_gain_y
            + self.meas_gain_x
            + self.current_prediction
            + self.aleatoric
        )

    def error_sum(self) -> np.ndarray:
        return self.err_x + self.err_y + self.delta_f + self.aleatoric_term


def decompose_rows(
    world: World,
    regimes: RegimeModels,
    x_true: np.ndarray,
    x_observed: np.ndarray,
    y_true: np.ndarray,
    epsilon: np.ndarray,
) -> DecompositionTable:
    x_true = np.asarray(x_true, dtype=float)
    x_observed = np.asarray(x_observed, dtype=float)
    y_true = np.asarray(y_true, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    f_star = world.f_star.values(x_true)
    pred_tt = predict(regimes.tt, x_true)
    pred_to = predict(regimes.to, x_true)
    pred_oo = predict(regimes.oo, x_observed)
    return DecompositionTable(
        model_approx_gain=f_star - pred_tt,
        meas_gain_y=pred_tt - pred_to,
        meas_gain_x=pred_to - pred_oo,
        current_prediction=pred_oo,
        aleatoric=epsilon,
        err_x=pred_oo - pred_to,
        err_y=pred_to - pred_tt,
        delta_f=pred_tt - f_star,
        aleatoric_term=f_star - y_true,
        y_true=y_true,
        y_pred=pred_oo,
    )


def decompose_bundle(
    world: World, regimes: RegimeModels, bundle: SampleBundle, rows: Optional[np.ndarray] = None
) -> DecompositionTable:
    idx = np.arange(bundle.n) if rows is None else np.asarray(rows)
    return decompose_rows(
        world,
        regimes,
        bundle.x_true[idx],
        bundle.x_observed[idx],
        bundle.y_true[idx],
        bundle.epsilon[idx],
    )


def decompose_pointwise(
    world: World,
    regimes: RegimeModels,
    x_true: Sequence[float],
    x_observed: Sequence[float],
    y_true: float,
    epsilon: float,
) -> PointwiseDecomposition:
    """Decompose one generated row into the five gain components."""
    table = decompose_rows(
        world,
        regimes,
        np.asarray(x_true, dtype=float).reshape(1, -1),
        np.asarray(x_observed, dtype=float).reshape(1, -1),
        np.asarray([y_true], dtype=float),
        np.asarray([epsilon], dtype=float),
    )
    return PointwiseDecomposition(
        model_approx_gain=float(table.model_approx_gain[0]),
        meas_gain_y=float(table.meas_gain_y[0]),
        meas_gain_x=float(table.meas_gain_x[0]),
        current_prediction=float(table.current_prediction[0]),
        aleatoric=float(table.aleatoric[0]),
    )


def decompose_error(
    world: World,
    regimes: RegimeModels,
    x_true: Sequence[float],
    x_observed: Sequence[float],
    y_true: float,
    epsilon: float,
) -> ErrorDecomposition:
    """Decompose one row's prediction error into its four components."""
    table = decompose_rows(
        world,
        regimes,
        np.asarray(x_true, dtype=float).reshape(1, -1),
        np.asarray(x_observed, dtype=float).reshape(1, -1),
        np.asarray([y_true], dtype=float),
        np.asarray([epsilon], dtype=float),
    )
    return ErrorDecomposition(
        err_x=float(table.err_x[0]),
        err_y=float(table.err_y[0]),
        delta_f=float(table.delta_f[0]),
        aleatoric_term=float(table.aleatoric_term[0]),
    )


def check_telescoping(
    table: DecompositionTable, rtol: float = REL_TOL, atol: float = ABS_TOL
) -> None:
    """Raise :class:`InvariantError` unless both component sums collapse."""
    point_err = np.abs(table.pointwise_sum() - table.y_true)
    point_bound = atol + rtol * np.abs(table.y_true)
    if np.any(point_err > point_bound):
        worst = int(np.argmax(point_err - point_bound))
        raise InvariantError(
            f"pointwise component sum misses y_true by {point_err[worst]:.3e} at row {worst}"
        )
    target = table.y_pred - table.y_true
    err = np.abs(table.error_sum() - target)
    bound = atol + rtol * np.abs(target)
    if np.any(err > bound):
        worst = int(np.argmax(err - bound))
        raise InvariantError(
            f"error component sum misses y_pred - y_true by {err[worst]:.3e} at row {worst}"
        )


# ---------------------------------------------------------------------------
# bias-variance Monte Carlo


@dataclass
class BiasVarianceReport:
    """Aggregate squared-error decomposition over refitted replicates.

    ``bias`` is the signed mean prediction error over all replicates and
    test points; ``variance`` is the variance of the epistemic part of the
    error over the same samples, so that
    ``empirical_mse = bias**2 + variance + aleatoric_variance + identity_gap``
    holds by construction and the gap is statistically zero.
    ``variance_within`` (per-point variance across replicates, grid-averaged)
    and ``bias_dispersion`` (grid variance of per-point mean error) split
    ``variance`` into its within-point and across-grid parts.
    """

    empirical_mse: float
    bias: float
    variance: float
    aleatoric_variance: float
    identity_gap: float
    replicate_count: int
    se_mse: float
    se_bias: float
    se_variance: float
    se_identity_gap: float
    variance_within: float
    bias_dispersion: float
    replicate_mse: np.ndarray

    @property
    def identity_z(self) -> float:
        if self.se_identity_gap == 0.0:
            return 0.0 if self.identity_gap == 0.0 else math.inf
        return self.identity_gap / self.se_identity_gap

    @property
    def bias_z(self) -> float:
        if self.se_bias == 0.0:
            return 0.0 if self.bias == 0.0 else math.inf
        return self.bias / self.se_bias


def _biasvar_cell(args) -> tuple[np.ndarray, np.ndarray]:
    """One replicate: refit, predict the fixed grid, return error rows."""
    world, spec, regime, n_train, grid, label = args
    f_star_grid = world.f_star.values(grid)
    if regime == "ORACLE":
        preds = f_star_grid
    else:
        bundle = worldgen.sample(world, n_train, label)
        rows = bundle.selected
        try:
            if regime == "OO":
                model = fit(spec, bundle.x_observed[rows], bundle.y_observed[rows], regime="OO")
            elif regime == "TO":
                model = fit(spec, bundle.x_true[rows], bundle.y_observed[rows], regime="TO")
            elif regime == "TT":
                model = fit(spec, bundle.x_true[rows], bundle.y_true[rows], regime="TT")
            else:
                raise InvalidSpecError(f"unknown training regime {regime!r}")
        except FitError as exc:
            raise type(exc)(f"replicate {label}: {exc}") from exc
        x_eval = (
            worldgen.observe_features(world, grid, f"{label}/test") if regime == "OO" else grid
        )
        preds = predict(model, x_eval)
    eps_test = worldgen.draw_aleatoric(world, grid, f"{label}/test")
    error = preds - (f_star_grid + eps_test)
    epistemic = preds - f_star_grid
    return error, epistemic


def _biasvar_stats(sums: np.ndarray, counts: np.ndarray, aleatoric: float) -> np.ndarray:
    """[mse, bias, variance, gap] from summed moments; vectorized over rows."""
    counts = np.asarray(counts, dtype=float).reshape(-1)
    mse = sums[:, 1] / counts
    bias = sums[:, 0] / counts
    variance = sums[:, 3] / counts - (sums[:, 2] / counts) ** 2
    gap = mse - bias**2 - variance - aleatoric
    return np.stack([mse, bias, variance, gap], axis=1)


def _jackknife(rep_sums: np.ndarray, rep_count: int, aleatoric: float):
    """Full-sample stats and leave-one-replicate-out standard errors."""
    totals = rep_sums.sum(axis=0)
    n_reps = rep_sums.shape[0]
    total_count = n_reps * rep_count
    full = _biasvar_stats(totals[None, :], np.array([total_count]), aleatoric)[0]
    loo = _biasvar_stats(
        totals[None, :] - rep_sums, np.full(n_reps, total_count - rep_count), aleatoric
    )
    center = loo.mean(axis=0)
    se = np.sqrt((n_reps - 1) / n_reps * np.sum((loo - center) ** 2, axis=0))
    return full, se


def bias_variance_monte_carlo(
    world: World,
    spec: ModelSpec,
    regime: str,
    n_train: int,
    n_replicates: int,
    test_grid: np.ndarray,
    base_label: str = "biasvar",
    workers: int = 1,
    seed_log: Optional[set] = None,
) -> BiasVarianceReport:
    """Refit on independent training draws and decompose the squared error.

    Each replicate draws its own training sample and fresh test noise from
    labeled substreams; the fixed ``test_grid`` of true-input points is
    shared by all replicates.  The aleatoric variance comes from the
    world's noise spec (oracle access), averaged over the grid when the
    noise is heteroskedastic.
    """
    if n_replicates < 2:
        raise InvalidSpecError("bias_variance_monte_carlo needs n_replicates >= 2")
    if regime not in ("OO", "TO", "TT", "ORACLE"):
        raise InvalidSpecError(f"unknown training regime {regime!r}")
    grid = np.asarray(test_grid, dtype=float)
    if grid.ndim != 2 or grid.shape[1] != world.input_dim:
        raise InvalidSpecError(
            f"test_grid must be m x {world.input_dim}, got shape {grid.shape}"
        )
    m = grid.shape[0]
    labels = [f"{base_label}/rep{r:05d}" for r in range(n_replicates)]
    if seed_log is not None:
        seed_log.update(labels)
        seed_log.update(f"{label}/test" for label in labels)
    tasks = [(world, spec, regime, n_train, grid, label) for label in labels]
    results = ordered_map(_biasvar_cell, tasks, workers=workers)

    rep_sums = np.empty((n_replicates, 4))
    replicate_mse = np.empty(n_replicates)
    point_ep_sum = np.zeros(m)
    point_ep_sq = np.zeros(m)
    for r, (error, epistemic) in enumerate(results):
        rep_sums[r] = (
            error.sum(),
            np.sum(error**2),
            epistemic.sum(),
            np.sum(epistemic**2),
        )
        replicate_mse[r] = float(np.mean(error**2))
        point_ep_sum += epistemic
        point_ep_sq += epistemic**2

    aleatoric = world.aleatoric_variance_on(grid)
    (mse, bias, variance, gap), (se_mse, se_bias, se_var, se_gap) = _jackknife(
        rep_sums, m, aleatoric
    )
    point_mean = point_ep_sum / n_replicates
    point_var = point_ep_sq / n_replicates - point_mean**2
    return BiasVarianceReport(
        empirical_mse=float(mse),
        bias=float(bias),
        variance=float(variance),
        aleatoric_variance=float(aleatoric),
        identity_gap=float(gap),
        replicate_count=n_replicates,
        se_mse=float(se_mse),
        se_bias=float(se_bias),
        se_variance=float(se_var),
        se_identity_gap=float(se_gap),
        variance_within=float(np.mean(point_var)),
        bias_dispersion=float(np.var(point_mean)),
        replicate_mse=replicate_mse,
    )


@dataclass
class ComponentCovarianceReport:
    """Empirical moments of the error components across refit replicates.

    Covariances among the epistemic components (and with the noise term)
    are measured, not assumed zero.
    """

    component_names: tuple[str, ...]
    means: np.ndarray
    covariance: np.ndarray
    replicate_count: int


def _component_cell(args) -> np.ndarray:
    world, spec, n_train, grid, label = args
    bundle = worldgen.sample(world, n_train, label)
    regimes = fit_regimes(world, bundle, spec)
    x_obs_grid = worldgen.observe_features(world, grid, f"{label}/test")
    eps_test = worldgen.draw_aleatoric(world, grid, f"{label}/test")
    f_star_grid = world.f_star.values(grid)
    table = decompose_rows(world, regimes, grid, x_obs_grid, f_star_grid + eps_test, eps_test)
    return np.array(
        [
            table.err_x.mean(),
            table.err_y.mean(),
            table.delta_f.mean(),
            table.aleatoric_term.mean(),
        ]
    )


def component_covariances(
    world: World,
    spec: ModelSpec,
    n_train: int,
    n_replicates: int,
    test_grid: np.ndarray,
    base_label: str = "components",
    workers: int = 1,
    seed_log: Optional[set] = None,
) -> ComponentCovarianceReport:
    if n_replicates < 2:
        raise InvalidSpecError("component_covariances needs n_replicates >= 2")
    grid = np.asarray(test_grid, dtype=float)
    labels = [f"{base_label}/rep{r:05d}" for r in range(n_replicates)]
    if seed_log is not None:
        seed_log.update(labels)
        seed_log.update(f"{label}/test" for label in labels)
    tasks = [(world, spec, n_train, grid, label) for label in labels]
    samples = np.stack(ordered_map(_component_cell, tasks, workers=workers))
    return ComponentCovarianceReport(
        component_names=("err_x", "err_y", "delta_f", "aleatoric_term"),
        means=samples.mean(axis=0),
        covariance=np.cov(samples, rowvar=False, ddof=1),
        replicate_count=n_replicates,
    )


# ---------------------------------------------------------------------------
# ceiling and representativeness


@dataclass(frozen=True)
class CeilingEstimate:
    """Best attainable performance once every epistemic channel is clean."""

    sigma_eps_sq: float
    ceiling_mse: float
    ceiling_r2: float
    se_sigma_eps_sq: float
    se_ceiling_r2: float
    n: int


def estimate_ceiling(world: World, n: int, base_label: str = "ceiling",
                     seed_log: Optional[set] = None) -> CeilingEstimate:
    """Estimate the noise floor and the matching R^2 ceiling from draws."""
    if n < 2:
        raise InvalidSpecError("estimate_ceiling needs n >= 2")
    if seed_log is not None:
        seed_log.add(base_label)
    bundle = worldgen.sample(world, n, base_label)
    eps = bundle.epsilon
    y = bundle.y_true
    sigma_sq = float(np.var(eps, ddof=1))
    var_y = float(np.var(y, ddof=1))
    if var_y == 0.0:
        raise InvalidSpecError("estimate_ceiling: Var(y_true) is zero; ceiling_r2 undefined")
    eps_dev_sq = (eps - eps.mean()) ** 2
    y_dev_sq = (y - y.mean()) ** 2
    m4 = float(np.mean(eps_dev_sq**2))
    se_sigma = math.sqrt(max(m4 - sigma_sq**2, 0.0) / n)
    # Delta method for r2 = 1 - sigma_sq / var_y via per-row influences.
    influence = -eps_dev_sq / var_y + sigma_sq * y_dev_sq / var_y**2
    se_r2 = float(np.std(influence, ddof=1) / math.sqrt(n))
    return CeilingEstimate(
        sigma_eps_sq=sigma_sq,
        ceiling_mse=sigma_sq,
        ceiling_r2=1.0 - sigma_sq / var_y,
        se_sigma_eps_sq=se_sigma,
        se_ceiling_r2=se_r2,
        n=n,
    )


def estimate_aleatoric_from_residuals(model: FittedModel, x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in noise-variance estimate from held-out residuals.

    Upward biased by whatever epistemic error the model still carries;
    exposed as an explicitly separate estimator, never silently substituted
    for the oracle value.
    """
    residuals = np.asarray(y, dtype=float) - predict(model, np.asarray(x, dtype=float))
    return float(np.var(residuals, ddof=1))


@dataclass(frozen=True)
class RepresentativenessReport:
    """Noise moments on the selected subsample vs. the full draw.

    Divergence z-scores compare the selected rows against their disjoint
    complement; both are zero when selection keeps everything.
    """

    eps_mean_full: float
    eps_mean_selected: float
    eps_var_full: float
    eps_var_selected: float
    z_mean: float
    z_var: float
    coverage: float
    n: int
    n_selected: int


def _var_se_sq(values: np.ndarray) -> float:
    n = values.shape[0]
    dev_sq = (values - values.mean()) ** 2
    m4 = float(np.mean(dev_sq**2))
    s2 = float(np.var(values, ddof=1))
    return max(m4 - s2**2, 0.0) / n


def representativeness_probe(
    world: World, n: int, base_label: str = "probe", seed_log: Optional[set] = None
) -> RepresentativenessReport:
    """Measure how biased selection distorts the observable noise moments."""
    if world.selection.rule == "none":
        raise InvalidSpecError("representativeness_probe needs a world with a selection rule")
    if n < 4:
        raise InvalidSpecError("representativeness_probe needs n >= 4")
    if seed_log is not None:
        seed_log.add(base_label)
    bundle = worldgen.sample(world, n, base_label)
    eps = bundle.epsilon
    sel = eps[bundle.selected]
    rest = eps[~bundle.selected]
    if rest.shape[0] < 2:
        z_mean = 0.0
        z_var = 0.0
    else:
        se_mean = math.sqrt(np.var(sel, ddof=1) / sel.shape[0] + np.var(rest, ddof=1) / rest.shape[0])
        z_mean = float((sel.mean() - rest.mean()) / se_mean) if se_mean > 0 else 0.0
        se_var = math.sqrt(_var_se_sq(sel) + _var_se_sq(rest))
        z_var = (
            float((np.var(sel, ddof=1) - np.var(rest, ddof=1)) / se_var) if se_var > 0 else 0.0
        )
    return RepresentativenessReport(
        eps_mean_full=float(eps.mean()),
        eps_mean_selected=float(sel.mean()),
        eps_var_full=float(np.var(eps, ddof=1)),
        eps_var_selected=float(np.var(sel, ddof=1)),
        z_mean=z_mean,
        z_var=z_var,
        coverage=bundle.coverage,
        n=n,
        n_selected=int(sel.shape[0]),
    )
