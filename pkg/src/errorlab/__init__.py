"""errorlab: synthetic prediction worlds with an exact error decomposition.

Build a data-generating process with known ground truth, corrupt what a
modeler would observe (target noise, feature noise, omission, coarsening,
biased selection), fit models under nested information regimes, and split
prediction error into its epistemic channels and the aleatoric floor.
"""

__version__ = "0.1.0"

from .config import Scenario, parse_config, scenario_to_yaml
from .decomp import (
    BiasVarianceReport,
    CeilingEstimate,
    ErrorDecomposition,
    PointwiseDecomposition,
    RepresentativenessReport,
    bias_variance_monte_carlo,
    check_telescoping,
    component_covariances,
    decompose_bundle,
    decompose_error,
    decompose_pointwise,
    estimate_aleatoric_from_residuals,
    estimate_ceiling,
    representativeness_probe,
)
from .experiments import (
    AxisLevel,
    InformationAxis,
    LearningCurve,
    LearningCurvePoint,
    PanelScenario,
    monotone_under_ci,
    regime_gallery,
    run_learning_curve,
    run_panel_scenarios,
)
from .models import (
    FittedModel,
    ModelSpec,
    RegimeModels,
    check_gradients,
    fit,
    fit_regimes,
    model_from_json,
    model_to_json,
    oracle_model,
    predict,
)
from .worldgen import (
    AleatoricSpec,
    FeatureNoiseSpec,
    SampleBundle,
    SelectionSpec,
    TargetNoiseSpec,
    TrueFunctionSpec,
    World,
    XDistributionSpec,
    apply_selection,
    build_world,
    eval_true_function,
    sample,
    verify_bundle,
)

__all__ = [name for name in dir() if not name.startswith("_")]
