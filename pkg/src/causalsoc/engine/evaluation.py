"""Incident-level evaluation, ablations, and threshold/weight calibration.

An incident counts as flagged positive when a disruptive containment action
executed or the attack terminal was reached. Incidents that end as
unresolved hand-offs are excluded from the confusion counts and reported
separately.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .. import adversary as adv
from ..council.net import ValueNet, masked_greedy
from ..council.training import TrainResult, greedy_council_step
from ..ets import CalibrationResult, EtsWeights, ReliabilityTarget, calibrate, logistic
from ..features import FeatureBuilder
from ..roadmap import ACTIONS, ConstrainedMdp, DISRUPTIVE_STATES
from ..telemetry import Episode, ParameterError
from .incidents import (
    EtsRuntime,
    IncidentTrajectory,
    OracleAdjudicator,
    Thresholds,
    compute_breakdown,
    run_incident,
)

COMMIT_TARGETS = set(DISRUPTIVE_STATES) | {"ThreatMitigated"}


@dataclass
class EvalMetrics:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unresolved: int = 0
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    fpr: float | None = None

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, unresolved: int = 0) -> "EvalMetrics":
        m = cls(tp=tp, fp=fp, tn=tn, fn=fn, unresolved=unresolved)
        if tp + fp > 0:
            m.precision = tp / (tp + fp)
        if tp + fn > 0:
            m.recall = tp / (tp + fn)
        if m.precision is not None and m.recall is not None and (m.precision + m.recall) > 0:
            m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall)
        if fp + tn > 0:
            m.fpr = fp / (fp + tn)
        return m

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(trajectories: list[IncidentTrajectory]) -> EvalMetrics:
    tp = fp = tn = fn = unresolved = 0
    for t in trajectories:
        if t.unresolved:
            unresolved += 1
            continue
        attack = t.label == "attack"
        if t.positive:
            tp += attack
            fp += not attack
        else:
            fn += attack
            tn += not attack
    return EvalMetrics.from_counts(tp, fp, tn, fn, unresolved)


def perturb_episodes(
    episodes: list[Episode], config: adv.ShadowJitterConfig, seed: int
) -> list[Episode]:
    out = []
    for i, ep in enumerate(episodes):
        channels, _ = adv.select_channels(ep.dim, config)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77, i]))
        out.append(adv.perturb_episode(ep, channels, config, rng))
    return out


def evaluate_single(
    episodes: list[Episode],
    blue: ValueNet | None,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    thresholds: Thresholds,
    ets_runtime: EtsRuntime,
    variable_names: tuple[str, ...],
    adjudicator=OracleAdjudicator(),
    adversary_config: adv.ShadowJitterConfig | None = None,
    frames_per_step: int = 2,
    t_max: int = 32,
    seed: int = 0,
) -> tuple[EvalMetrics, list[IncidentTrajectory]]:
    """Run every episode through the online loop and summarize the confusion counts."""
    if not episodes:
        raise ParameterError("empty evaluation split")
    if adversary_config is not None:
        episodes = perturb_episodes(episodes, adversary_config, seed)
    trajectories = [
        run_incident(
            ep, blue, red, mdp, builder, thresholds, ets_runtime, variable_names,
            adjudicator=adjudicator, frames_per_step=frames_per_step, t_max=t_max, seed=seed,
        )
        for ep in episodes
    ]
    return summarize(trajectories), trajectories


@dataclass
class SeedEvaluation:
    seed: int
    metrics: EvalMetrics
    trajectories: list[IncidentTrajectory]


def evaluate(per_seed: list[SeedEvaluation]) -> dict:
    """Seed-mean summary plus per-seed rows and seed standard deviations."""
    if not per_seed:
        raise ParameterError("no per-seed evaluations")
    rows = [s.metrics for s in per_seed]

    def collect(name: str) -> list[float]:
        return [getattr(m, name) for m in rows if getattr(m, name) is not None]

    means, stds = {}, {}
    for name in ("precision", "recall", "f1", "fpr"):
        vals = collect(name)
        means[name] = float(np.mean(vals)) if vals else None
        stds[name] = float(np.std(vals)) if vals else None
    return {
        "per_seed": {s.seed: s.metrics.to_dict() for s in per_seed},
        "mean": means,
        "seed_std": stds,
    }


@dataclass
class AblationTable:
    rows: dict[str, dict]  # variant -> evaluate() output

    VARIANTS = ("full", "no_scm", "no_red", "no_blue")

    def mean(self, variant: str, metric: str) -> float | None:
        return self.rows[variant]["mean"][metric]

    def to_dict(self) -> dict:
        return {"rows": self.rows}


# ---------------------------------------------------------------------------
# Threshold and ETS-weight calibration
# ---------------------------------------------------------------------------

def calibrate_tau_div(
    benign_episodes: list[Episode],
    blue: ValueNet | None,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    veto_margin: float = 1.0,
    divergence_metric: str = "js_policy",
    percentile: float = 0.90,
    frames_per_step: int = 2,
    t_max: int = 32,
) -> float:
    """tau_div = percentile of divergence on ungated benign validation states."""
    from ..env import IncidentEnv
    from ..roadmap import ACTION_INDEX

    values: list[float] = []
    for ep in benign_episodes:
        env = IncidentEnv(mdp, builder, ep, frames_per_step, t_max)
        while not env.done:
            arb, _aB, aR, _qB, _qR, d, _xb, _xr = greedy_council_step(
                env, blue, red, veto_margin, divergence_metric
            )
            values.append(d.value)
            action = arb.executed
            if action is None or action == ACTION_INDEX["escalate_to_human"]:
                break
            env.apply(action, red_proposal=aR, vetoed=arb.vetoed)
    if not values:
        return 0.9 * float(np.log(2.0))
    return float(np.quantile(np.array(values), percentile))


def experience_snapshot(result: TrainResult, max_states: int = 4096):
    """Deterministic subsample of the trained agent's replay snapshot for ETS coverage."""
    states = result.experience_states
    actions = result.experience_actions
    if len(states) > max_states:
        idx = np.linspace(0, len(states) - 1, max_states).astype(int)
        states, actions = states[idx], actions[idx]
    return states, actions


@dataclass
class CalibrationScenario:
    scenario_id: str
    subscores: tuple[float, float, float]
    target: float


def build_calibration_scenarios(
    episodes: list[Episode],
    blue: ValueNet | None,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    ets_runtime: EtsRuntime,
    true_roadmap_edges: set[tuple[str, str]],
    veto_margin: float = 1.0,
    divergence_metric: str = "js_policy",
    frames_per_step: int = 2,
    t_max: int = 32,
    seed: int = 0,
) -> list[CalibrationScenario]:
    """One scenario per episode: ETS sub-scores at the commitment state plus
    the oracle reliability target.

    The reliability target averages three indicators: (i) whether the
    recommended action's commitment (contain/mitigate vs not) matches the
    ground-truth label, (ii) the fraction of executed state transitions
    consistent with the ground-truth roadmap, and (iii) top-action stability
    under bounded probes.
    """
    from ..env import IncidentEnv
    from ..roadmap import ACTION_INDEX

    net = blue or red
    scenarios = []
    for k, ep in enumerate(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA1B, k]))
        env = IncidentEnv(mdp, builder, ep, frames_per_step, t_max)
        picked = None  # (x, mask, div, a_rec)
        transitions: list[tuple[str, str]] = []
        while not env.done:
            arb, aB, aR, qB, _qR, d, x_blue, _xr = greedy_council_step(
                env, blue, red, veto_margin, divergence_metric
            )
            mask = env.mask()
            a_rec = aB if blue is not None else aR
            target_state = ACTIONS[a_rec].target
            committing = target_state in COMMIT_TARGETS or target_state in (
                "BenignClosure",
                "InvestigationAborted",
            )
            if committing and picked is None:
                picked = (x_blue, mask.copy(), d.value, a_rec)
            action = arb.executed
            if action is None or action == ACTION_INDEX["escalate_to_human"]:
                break
            prev = env.state
            env.apply(action, red_proposal=aR, vetoed=arb.vetoed)
            if env.state != prev:
                transitions.append((prev, env.state))
            if picked is None and env.done:
                break
        if picked is None:
            # fall back to the initial state
            env2 = IncidentEnv(mdp, builder, ep, frames_per_step, t_max)
            arb, aB, aR, qB, _qR, d, x_blue, _xr = greedy_council_step(
                env2, blue, red, veto_margin, divergence_metric
            )
            picked = (x_blue, env2.mask().copy(), d.value, aB if blue is not None else aR)

        x, mask, d_val, a_rec = picked
        breakdown, _grad = compute_breakdown(net, x, mask, d_val, ets_runtime, rng)
        stability = breakdown.sub_metrics.get("ranking_stability", 1.0)

        commit = ACTIONS[a_rec].target in COMMIT_TARGETS
        correct = float(commit == (ep.label == "attack"))
        if transitions:
            consistent = np.mean([1.0 if t in true_roadmap_edges else 0.0 for t in transitions])
        else:
            consistent = 1.0
        target = float(np.mean([correct, consistent, stability]))
        scenarios.append(
            CalibrationScenario(
                scenario_id=ep.episode_id,
                subscores=(breakdown.clarity, breakdown.completeness, breakdown.confidence),
                target=target,
            )
        )
    return scenarios


@dataclass
class EtsCalibrationReport:
    weights: EtsWeights
    fit: CalibrationResult
    holdout_spearman: float
    n_calibration: int
    n_holdout: int


def calibrate_ets_weights(
    scenarios: list[CalibrationScenario],
    base: EtsWeights = EtsWeights(),
) -> EtsCalibrationReport:
    """Fit simplex weights on even-indexed scenarios; Spearman on the held-out rest."""
    if len(scenarios) < 6:
        raise ParameterError("need at least 6 scenarios for calibration + holdout")
    calib = scenarios[0::2]
    holdout = scenarios[1::2]
    s = np.array([c.subscores for c in calib])
    r = [ReliabilityTarget(c.scenario_id, c.target) for c in calib]
    fit = calibrate(s, r, base=base)
    weights = fit.weights

    s_h = np.array([c.subscores for c in holdout])
    r_h = np.array([c.target for c in holdout])
    ets_h = np.array(
        [logistic((x - weights.mu) / weights.sigma_cal) for x in s_h @ np.array(weights.w)]
    )
    from scipy import stats as sps

    if np.allclose(ets_h, ets_h[0]) or np.allclose(r_h, r_h[0]):
        rho = 0.0
    else:
        rho = float(sps.spearmanr(ets_h, r_h).statistic)
    return EtsCalibrationReport(
        weights=weights,
        fit=fit,
        holdout_spearman=rho,
        n_calibration=len(calib),
        n_holdout=len(holdout),
    )
