"""Empirical verification suite for the engine's safety properties.

Checks, in order: exact structural safety under masking (zero transitions
outside the roadmap), bounded spurious-transition mass when the masking
roadmap carries injected false edges, monotone false-positive reduction
under gating with the rejected-FP mass estimate, the Hoeffding-style lower
bound on that mass with a coverage experiment, the escalation-liveness trace
property, and the empirical false-positive shift under bounded telemetry
manipulation.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .. import adversary as adv
from ..council.net import ValueNet
from ..features import FeatureBuilder
from ..roadmap import (
    ACTIONS,
    TERMINAL_STATES,
    ConstrainedMdp,
    InvestigationOntology,
    RoadmapDag,
)
from ..telemetry import Episode, ParameterError
from .evaluation import EvalMetrics, evaluate_single, summarize
from .incidents import EtsRuntime, IncidentTrajectory, OracleAdjudicator, Thresholds


# ---------------------------------------------------------------------------
# Causal consistency (bounded spurious-transition mass)
# ---------------------------------------------------------------------------

@dataclass
class ConsistencyReport:
    total_transitions: int
    spurious_count: int
    episodes: int
    mean_spurious_per_episode: float
    bound_rho_t: float
    mean_upper_95: float
    passed: bool


def check_causal_consistency(
    trajectories: list[IncidentTrajectory],
    true_edges: set[tuple[str, str]],
    rho: float = 0.0,
    horizon: int = 32,
) -> ConsistencyReport:
    """Count executed state-changing transitions outside the true roadmap.

    With rho = 0 the pass condition is exact zero; with rho > 0 the mean
    spurious count per episode must sit below rho * horizon, checked with a
    one-sided 95% confidence bound on the Monte Carlo mean.
    """
    per_episode: list[int] = []
    total = 0
    for t in trajectories:
        bad = 0
        for rec in t.steps:
            if rec.next_state is None or rec.next_state == rec.state:
                continue
            total += 1
            if (rec.state, rec.next_state) not in true_edges:
                bad += 1
        per_episode.append(bad)
    counts = np.array(per_episode, dtype=float) if per_episode else np.zeros(1)
    mean = float(counts.mean())
    spurious = int(counts.sum())
    bound = rho * horizon
    if len(counts) > 1:
        se = float(counts.std(ddof=1)) / math.sqrt(len(counts))
    else:
        se = 0.0
    upper = mean + 1.645 * se
    passed = spurious == 0 if rho == 0 else upper <= bound + 1e-12
    return ConsistencyReport(
        total_transitions=total,
        spurious_count=spurious,
        episodes=len(per_episode),
        mean_spurious_per_episode=mean,
        bound_rho_t=bound,
        mean_upper_95=upper,
        passed=passed,
    )


def inject_false_edges(
    roadmap: RoadmapDag, n_edges: int, seed: int
) -> tuple[RoadmapDag, set[tuple[str, str]]]:
    """Add acyclicity-preserving edges that are absent from the true roadmap."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFA15E]))
    order = {s: i for i, s in enumerate(roadmap.nodes)}
    candidates = [
        (s, t)
        for s in roadmap.nodes
        for t in roadmap.nodes
        if s not in TERMINAL_STATES
        and t != s
        and order[t] > order[s]
        and (s, t) not in roadmap.edges
    ]
    if len(candidates) < n_edges:
        raise ParameterError(f"only {len(candidates)} candidate false edges available")
    picked = [candidates[i] for i in sorted(rng.choice(len(candidates), n_edges, replace=False))]
    edges = dict(roadmap.edges)
    classes = dict(roadmap.constraint_class)
    for e in picked:
        edges[e] = 1.0
        classes[e] = "hard"
    return (
        RoadmapDag(nodes=roadmap.nodes, edges=edges, constraint_class=classes, tau_c=roadmap.tau_c),
        set(picked),
    )


def corrupted_roadmap_experiment(
    roadmap: RoadmapDag,
    ontology: InvestigationOntology,
    n_false_edges: int = 2,
    episodes: int = 1000,
    horizon: int = 32,
    rho: float = 0.1,
    seed: int = 0,
) -> ConsistencyReport:
    """Uniform-over-admissible random walk on a roadmap with injected false edges.

    The uniform policy maximizes exposure to the corrupted edges, giving the
    most adversarial admissible policy for the bounded-violation check.
    """
    true_edges = set(roadmap.edges)
    corrupted, _injected = inject_false_edges(roadmap, n_false_edges, seed)
    mdp = ConstrainedMdp(roadmap=corrupted, ontology=ontology)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0DD5]))
    per_episode = []
    total = 0
    for _ in range(episodes):
        state = "InitialAlert"
        bad = 0
        for _t in range(horizon):
            mask = mdp.action_mask(state)
            choices = np.flatnonzero(mask)
            if len(choices) == 0:
                break
            action = int(choices[rng.integers(len(choices))])
            nxt = mdp.step_state(state, action)
            if nxt != state:
                total += 1
                if (state, nxt) not in true_edges:
                    bad += 1
            state = nxt
            if state in TERMINAL_STATES:
                break
        per_episode.append(bad)
    counts = np.array(per_episode, dtype=float)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1)) / math.sqrt(len(counts))
    upper = mean + 1.645 * se
    return ConsistencyReport(
        total_transitions=total,
        spurious_count=int(counts.sum()),
        episodes=episodes,
        mean_spurious_per_episode=mean,
        bound_rho_t=rho * horizon,
        mean_upper_95=upper,
        passed=upper <= rho * horizon + 1e-12,
    )


# ---------------------------------------------------------------------------
# Gating monotonicity and the rejected-FP mass bound
# ---------------------------------------------------------------------------

@dataclass
class GatingReport:
    n_benign: int
    fp_ungated: int
    fp_gated: int
    eps_hat: float
    hoeffding_lower: float
    passed: bool
    strict: bool


def check_gating_monotonicity(
    benign_episodes: list[Episode],
    blue: ValueNet,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    thresholds: Thresholds,
    ets_runtime: EtsRuntime,
    variable_names: tuple[str, ...],
    delta: float = 0.05,
    seed: int = 0,
    frames_per_step: int = 2,
    t_max: int = 32,
) -> GatingReport:
    """Construct the gated rule from (baseline, gate) and verify monotone FP reduction.

    Baseline f_B: Blue acting alone, ungated. Gate G(x): the full gated
    council (divergence/ETS gates, Red veto, adjudication that denies
    disruption on benign ground truth) executes a disruptive action. The
    gated rule flags disruptive iff f_B does AND G holds, which makes the
    inequality exact; the report also carries the rejected-FP mass.
    """
    ungated_th = Thresholds(
        tau_escalate=0.0, tau_div=None, veto_margin=thresholds.veto_margin,
        divergence_metric=thresholds.divergence_metric, gates_enabled=False,
    )
    fb = []
    for ep in benign_episodes:
        _, trajs = evaluate_single(
            [ep], blue, None, mdp, builder, ungated_th, ets_runtime, variable_names,
            adjudicator=None, frames_per_step=frames_per_step, t_max=t_max, seed=seed,
        )
        fb.append(trajs[0].disruption_executed)
    gate = []
    for ep in benign_episodes:
        _, trajs = evaluate_single(
            [ep], blue, red, mdp, builder, thresholds, ets_runtime, variable_names,
            adjudicator=OracleAdjudicator(), frames_per_step=frames_per_step,
            t_max=t_max, seed=seed,
        )
        gate.append(trajs[0].disruption_executed)
    n = len(benign_episodes)
    fp_ungated = sum(fb)
    fp_gated = sum(f and g for f, g in zip(fb, gate))
    rejected = sum(f and not g for f, g in zip(fb, gate))
    eps_hat = rejected / n if n else 0.0
    bound = hoeffding_lower_bound(n, delta, eps_hat) if n else 0.0
    return GatingReport(
        n_benign=n,
        fp_ungated=fp_ungated,
        fp_gated=fp_gated,
        eps_hat=eps_hat,
        hoeffding_lower=bound,
        passed=fp_gated <= fp_ungated,
        strict=fp_gated < fp_ungated or rejected == 0,
    )


def hoeffding_lower_bound(n: int, delta: float, eps_hat: float) -> float:
    """eps >= eps_hat - sqrt(ln(2/delta) / (2n)) with probability >= 1 - delta."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0 < delta < 1:
        raise ParameterError("delta must be in (0, 1)")
    return eps_hat - math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def hoeffding_coverage_experiment(
    p_true: float = 0.3,
    n: int = 200,
    delta: float = 0.05,
    trials: int = 1000,
    seed: int = 0,
) -> float:
    """Fraction of Bernoulli trials where the true mean respects the lower bound."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0F]))
    hits = 0
    for _ in range(trials):
        eps_hat = float(rng.binomial(n, p_true)) / n
        if p_true >= hoeffding_lower_bound(n, delta, eps_hat):
            hits += 1
    return hits / trials


# ---------------------------------------------------------------------------
# Escalation liveness and adversarial FP shift
# ---------------------------------------------------------------------------

@dataclass
class LivenessReport:
    high_uncertainty_steps: int
    satisfied: int
    rate: float  # 1.0 when vacuous


def check_escalation_liveness(
    trajectories: list[IncidentTrajectory], tau_div: float
) -> LivenessReport:
    """Every step with divergence above tau_div must be followed by an escalation."""
    total = satisfied = 0
    for t in trajectories:
        esc_steps = [e.step_idx for e in t.escalations]
        terminal_escalated = t.terminal_status == "EscalatedToHuman"
        for rec in t.steps:
            if rec.divergence > tau_div:
                total += 1
                if (
                    any(s >= rec.step for s in esc_steps)
                    or rec.escalated
                    or terminal_escalated
                ):
                    satisfied += 1
        # gate-tripped escalations that executed no step still count as
        # high-uncertainty events with an immediate escalation
        for e in t.escalations:
            if e.divergence > tau_div and not any(
                rec.step == e.step_idx and rec.divergence > tau_div for rec in t.steps
            ):
                total += 1
                satisfied += 1
    rate = satisfied / total if total else 1.0
    return LivenessReport(high_uncertainty_steps=total, satisfied=satisfied, rate=rate)


@dataclass
class FpShiftReport:
    fp_clean: float
    fp_perturbed: float
    shift: float


def estimate_fp_shift(
    benign_episodes: list[Episode],
    blue: ValueNet | None,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    thresholds: Thresholds,
    ets_runtime: EtsRuntime,
    variable_names: tuple[str, ...],
    adversary_config: adv.ShadowJitterConfig,
    seed: int = 0,
    frames_per_step: int = 2,
    t_max: int = 32,
) -> FpShiftReport:
    """|FP(clean) - FP(perturbed)| on paired benign sets; empirical proxy only."""
    kwargs = dict(
        mdp=mdp, builder=builder, thresholds=thresholds, ets_runtime=ets_runtime,
        variable_names=variable_names, adjudicator=OracleAdjudicator(),
        frames_per_step=frames_per_step, t_max=t_max, seed=seed,
    )
    m_clean, _ = evaluate_single(benign_episodes, blue, red, **kwargs)
    m_pert, _ = evaluate_single(
        benign_episodes, blue, red, adversary_config=adversary_config, **kwargs
    )
    fp_clean = m_clean.fpr if m_clean.fpr is not None else 0.0
    fp_pert = m_pert.fpr if m_pert.fpr is not None else 0.0
    return FpShiftReport(fp_clean=fp_clean, fp_perturbed=fp_pert, shift=abs(fp_pert - fp_clean))


@dataclass
class VerificationReport:
    structural: ConsistencyReport
    corrupted: ConsistencyReport
    gating: GatingReport
    hoeffding_value_at_03: float
    hoeffding_coverage: float
    liveness: LivenessReport
    fp_shift: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "structural": dataclasses.asdict(self.structural),
            "corrupted": dataclasses.asdict(self.corrupted),
            "gating": dataclasses.asdict(self.gating),
            "hoeffding_value_at_03": self.hoeffding_value_at_03,
            "hoeffding_coverage": self.hoeffding_coverage,
            "liveness": dataclasses.asdict(self.liveness),
            "fp_shift": self.fp_shift,
        }
