"""Design and Monte Carlo evaluation of multistage sequential tests."""

from .models import (
    Ar1,
    GaussianMean,
    Hypothesis,
    ModelSpec,
    PathState,
    Statistic,
    TwoStateMarkov,
    new_state,
    simulate_step,
    statistic_limit,
    tilt_llr,
)
from .ratefn import (
    CumulantLimit,
    RateFunctions,
    are,
    chernoff_info,
    cumulant_limit,
    g_inverse,
    legendre,
    psi,
    rate_functions,
    theta_of_slope,
)
from .fss import FssDesign, FssSolver, Method, SimBudget, design_fss, tail_prob
from .sampler import (
    EventSpec,
    IsEstimate,
    TiltSpec,
    above,
    at_or_below,
    is_estimate,
    tilt_for_level,
)
from .multistage import (
    Decision,
    FourStageCheckDesign,
    FourStageHatDesign,
    RunOutcome,
    SprtDesign,
    ThreeStageDesign,
    design_four_stage_check,
    design_four_stage_hat,
    design_sprt,
    design_three_stage,
    ess_bounds,
    run_four_stage_check,
    run_four_stage_hat,
    run_sprt,
    run_three_stage,
)
from .harness import (
    EvalReport,
    Regime,
    RegimeSpec,
    evaluate,
    gaussian_exact_ess,
    sweep,
)

__all__ = [
    "Ar1",
    "GaussianMean",
    "Hypothesis",
    "ModelSpec",
    "PathState",
    "Statistic",
    "TwoStateMarkov",
    "new_state",
    "simulate_step",
    "statistic_limit",
    "tilt_llr",
    "CumulantLimit",
    "RateFunctions",
    "are",
    "chernoff_info",
    "cumulant_limit",
    "g_inverse",
    "legendre",
    "psi",
    "rate_functions",
    "theta_of_slope",
    "FssDesign",
    "FssSolver",
    "Method",
    "SimBudget",
    "design_fss",
    "tail_prob",
    "EventSpec",
    "IsEstimate",
    "TiltSpec",
    "above",
    "at_or_below",
    "is_estimate",
    "tilt_for_level",
    "Decision",
    "FourStageCheckDesign",
    "FourStageHatDesign",
    "RunOutcome",
    "SprtDesign",
    "ThreeStageDesign",
    "design_four_stage_check",
    "design_four_stage_hat",
    "design_sprt",
    "design_three_stage",
    "ess_bounds",
    "run_four_stage_check",
    "run_four_stage_hat",
    "run_sprt",
    "run_three_stage",
    "EvalReport",
    "Regime",
    "RegimeSpec",
    "evaluate",
    "gaussian_exact_ess",
    "sweep",
]
