"""Online incident-response loop, evaluation metrics, and verification suite."""

from .incidents import (
    AdjudicationDecision,
    EscalationEvent,
    EtsRuntime,
    IncidentSession,
    IncidentTrajectory,
    OracleAdjudicator,
    StepRecord,
    Thresholds,
    run_incident,
)
from .evaluation import (
    AblationTable,
    EvalMetrics,
    calibrate_ets_weights,
    calibrate_tau_div,
    evaluate,
    evaluate_single,
)
from .verification import (
    VerificationReport,
    check_causal_consistency,
    check_escalation_liveness,
    check_gating_monotonicity,
    corrupted_roadmap_experiment,
    estimate_fp_shift,
    hoeffding_coverage_experiment,
    hoeffding_lower_bound,
)

__all__ = [
    "AblationTable",
    "AdjudicationDecision",
    "EscalationEvent",
    "EtsRuntime",
    "EvalMetrics",
    "IncidentSession",
    "IncidentTrajectory",
    "OracleAdjudicator",
    "StepRecord",
    "Thresholds",
    "VerificationReport",
    "calibrate_ets_weights",
    "calibrate_tau_div",
    "check_causal_consistency",
    "check_escalation_liveness",
    "check_gating_monotonicity",
    "corrupted_roadmap_experiment",
    "estimate_fp_shift",
    "evaluate",
    "evaluate_single",
    "hoeffding_coverage_experiment",
    "hoeffding_lower_bound",
    "run_incident",
]
