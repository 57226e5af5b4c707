"""Online incident handling: deliberate, gate, arbitrate, execute, explain.

Each decision step runs propose -> critique -> divergence -> gate ->
arbitrate -> execute -> ETS. Escalations (divergence gate, post-execution
ETS gate, explicit escalate action, or a veto deadlock) pause the incident
at its current state and hand it to an adjudicator; the adjudicator's
decision executes as a human-reviewed step and the loop continues. An
unresolved hand-off terminates the incident in EscalatedToHuman.

Soft roadmap edges get elevated monitoring: before executing a transition
whose edge is soft, the divergence gate is re-checked at half the
threshold.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..council.net import ValueNet, masked_greedy
from ..council.policy import DivergenceScore, arbitrate, divergence
from ..env import IncidentEnv
from ..ets import EtsBreakdown, EtsWeights, clarity, completeness, confidence, ets_from_subscores, should_escalate
from ..features import FeatureBuilder, N_ACTIONS
from ..roadmap import ACTIONS, ACTION_INDEX, ConstrainedMdp, DISRUPTIVE_ACTIONS
from ..telemetry import Episode, ParameterError

ESCALATE = ACTION_INDEX["escalate_to_human"]
ABORT = ACTION_INDEX["abort_investigation"]


@dataclass(frozen=True)
class Thresholds:
    tau_escalate: float = 0.5
    tau_div: float | None = None
    veto_margin: float = 1.0
    divergence_metric: str = "js_policy"
    soft_edge_tightening: float = 0.5  # multiplier on tau_div while crossing a soft edge
    gates_enabled: bool = True


@dataclass
class EtsRuntime:
    """Everything the ETS computation needs beyond the current state."""

    weights: EtsWeights
    experience_states: np.ndarray  # replay snapshot for the coverage term
    experience_actions: np.ndarray
    probe_radius: float = 0.25
    n_probes: int = 10
    neighborhood_radius: float = 0.5

    @classmethod
    def empty(cls, state_dim: int, weights: EtsWeights | None = None) -> "EtsRuntime":
        return cls(
            weights=weights or EtsWeights(),
            experience_states=np.zeros((0, state_dim), dtype=np.float32),
            experience_actions=np.zeros(0, dtype=int),
        )


@dataclass
class EscalationEvent:
    step_idx: int
    state: str
    reason: str  # divergence_gate | ets_gate | explicit_action | veto_deadlock
    divergence: float
    ets_normalized: float | None
    root_cause_node: str
    blue_proposal: int
    red_proposal: int
    resolution: str | None = None


@dataclass
class StepRecord:
    step: int
    state: str
    frame_idx: int
    a_blue: int
    a_red: int
    executed: int | None
    next_state: str | None
    r_blue: float
    r_red: float
    divergence: float
    ets: EtsBreakdown | None
    soft_edge: bool
    escalated: bool
    human_decided: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "state": self.state,
            "frame_idx": self.frame_idx,
            "a_blue": ACTIONS[self.a_blue].name,
            "a_red": ACTIONS[self.a_red].name,
            "executed": ACTIONS[self.executed].name if self.executed is not None else None,
            "next_state": self.next_state,
            "r_blue": self.r_blue,
            "r_red": self.r_red,
            "divergence": self.divergence,
            "ets": self.ets.to_dict() if self.ets else None,
            "soft_edge": self.soft_edge,
            "escalated": self.escalated,
            "human_decided": self.human_decided,
        }


@dataclass
class IncidentTrajectory:
    episode_id: str
    label: str
    steps: list[StepRecord] = field(default_factory=list)
    escalations: list[EscalationEvent] = field(default_factory=list)
    terminal_status: str | None = None
    disruption_executed: bool = False

    @property
    def positive(self) -> bool:
        """Incident classified as attack: disruption executed or attack-terminal."""
        return self.disruption_executed or self.terminal_status == "ThreatMitigated"

    @property
    def unresolved(self) -> bool:
        return self.terminal_status == "EscalatedToHuman"

    def validate(self, mdp: ConstrainedMdp) -> int:
        """Count state-changing steps outside the masked roadmap (must be 0)."""
        bad = 0
        for rec in self.steps:
            if rec.executed is None or rec.next_state is None or rec.next_state == rec.state:
                continue
            if (rec.state, rec.next_state) not in mdp.roadmap.edges:
                bad += 1
        return bad


@dataclass(frozen=True)
class AdjudicationDecision:
    kind: str  # approve_blue | approve_red_alternative | substitute | abort
    action: str | None = None  # action name for substitute


class OracleAdjudicator:
    """Automated adjudicator for batch evaluation.

    Approves the mitigation course iff the episode's ground-truth label is
    attack; on benign incidents it directs closure (or abort when closure is
    inadmissible). Used so the whole pipeline runs with no console attached.
    """

    def __call__(self, session: "IncidentSession", event: EscalationEvent) -> AdjudicationDecision:
        mask = session.env.mask()
        if session.env.is_attack:
            blue = event.blue_proposal
            spec = ACTIONS[blue]
            if mask[blue] and (blue in DISRUPTIVE_ACTIONS or spec.target == "ThreatMitigated"):
                return AdjudicationDecision(kind="approve_blue")
            for name in ("contain_isolate_host", "contain_block_flow", "close_mitigated"):
                if mask[ACTION_INDEX[name]]:
                    return AdjudicationDecision(kind="substitute", action=name)
            if mask[blue] and blue != ESCALATE:
                return AdjudicationDecision(kind="approve_blue")
            return AdjudicationDecision(kind="abort")
        if mask[ACTION_INDEX["close_benign"]]:
            return AdjudicationDecision(kind="substitute", action="close_benign")
        return AdjudicationDecision(kind="abort")


def compute_breakdown(
    net: ValueNet,
    x: np.ndarray,
    mask: np.ndarray,
    div_value: float,
    runtime: EtsRuntime,
    rng: np.random.Generator,
) -> tuple[EtsBreakdown, np.ndarray]:
    """Full ETS breakdown at a decision state; returns (breakdown, input gradient)."""
    q = net.forward(x)[0]
    a_star = masked_greedy(q, mask)
    grad = net.input_gradient(x, a_star)
    mag = np.abs(grad)
    attributions = mag / mag.sum() if mag.sum() > 0 else np.full(len(mag), 1.0 / len(mag))

    offsets = rng.standard_normal((runtime.n_probes, len(x)))
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets = offsets / np.maximum(norms, 1e-12) * runtime.probe_radius
    probe_q_all = net.forward(x[None, :] + offsets.astype(np.float32))
    probe_q = probe_q_all[:, a_star].astype(np.float64)
    masked_scores = np.where(mask, probe_q_all.astype(np.float64), -np.inf)
    top_preserved = (np.argmax(masked_scores, axis=1) == a_star).astype(float)

    c1, m1 = clarity(
        attributions,
        q_center=float(q[a_star]),
        probe_offsets=offsets,
        probe_q=probe_q,
        gradient=grad,
        probe_top_preserved=top_preserved,
        alpha=runtime.weights.alpha,
    )
    c2, m2, _empty = completeness(
        x.astype(np.float64),
        runtime.experience_states.astype(np.float64),
        runtime.experience_actions,
        attributions,
        n_actions=N_ACTIONS,
        neighborhood_radius=runtime.neighborhood_radius,
        beta=runtime.weights.beta,
    )
    var = net.q_variance(x, a_star)
    c3, m3 = confidence(
        q, mask, var, div_value,
        gamma_c=runtime.weights.gamma_c,
        form=runtime.weights.confidence_form,
    )
    breakdown = ets_from_subscores(c1, c2, c3, runtime.weights, {**m1, **m2, **m3})
    return breakdown, grad


@dataclass
class IncidentSession:
    """Stepwise incident state machine with pause/resume adjudication."""

    env: IncidentEnv
    blue: ValueNet | None
    red: ValueNet | None
    thresholds: Thresholds
    ets_runtime: EtsRuntime
    builder: FeatureBuilder
    variable_names: tuple[str, ...]
    rng: np.random.Generator
    trajectory: IncidentTrajectory = field(init=False)
    pending_event: EscalationEvent | None = field(init=False, default=None)

    def __post_init__(self) -> None:
        self.trajectory = IncidentTrajectory(
            episode_id=self.env.episode.episode_id, label=self.env.episode.label
        )

    # -- internals ----------------------------------------------------------

    def _proposals(self):
        mask = self.env.mask()
        if self.blue is not None:
            x_blue = self.env.observe(None)
            q_blue = self.blue.forward(x_blue)[0]
            a_blue = masked_greedy(q_blue, mask)
        else:
            x_blue = q_blue = a_blue = None
        if self.red is not None:
            x_red = self.env.observe(a_blue)
            q_red = self.red.forward(x_red)[0]
            a_red = masked_greedy(q_red, mask)
        else:
            x_red, q_red, a_red = x_blue, q_blue, a_blue
        if self.blue is None:
            x_blue, q_blue, a_blue = x_red, q_red, a_red
        if self.red is None or self.blue is None:
            div = DivergenceScore(0.0, self.thresholds.divergence_metric)
        else:
            div = divergence(q_blue, q_red, mask, self.thresholds.divergence_metric)
        return mask, x_blue, q_blue, a_blue, q_red, a_red, div

    def _root_cause(self, grad: np.ndarray) -> str:
        tele = self.builder.attribution_to_telemetry(grad)
        return self.variable_names[int(np.argmax(tele))]

    def _escalation(self, reason, div, ets_norm, a_blue, a_red, x_blue, mask) -> EscalationEvent:
        net = self.blue or self.red
        grad = net.input_gradient(x_blue, masked_greedy(net.forward(x_blue)[0], mask))
        event = EscalationEvent(
            step_idx=self.env.step_idx,
            state=self.env.state,
            reason=reason,
            divergence=div.value,
            ets_normalized=ets_norm,
            root_cause_node=self._root_cause(grad),
            blue_proposal=a_blue,
            red_proposal=a_red,
        )
        self.trajectory.escalations.append(event)
        return event

    def _execute(self, action, a_blue, a_red, div, vetoed, soft, human_decided) -> StepRecord:
        tau = self.thresholds.tau_div
        out = self.env.apply(
            action,
            red_proposal=a_red,
            vetoed=vetoed,
            uncertainty_high=(tau is not None and div.value > tau),
        )
        rec = StepRecord(
            step=len(self.trajectory.steps),
            state=out.prev_state,
            frame_idx=self.env.frame_idx,
            a_blue=a_blue,
            a_red=a_red,
            executed=action,
            next_state=out.next_state,
            r_blue=out.r_blue,
            r_red=out.r_red,
            divergence=div.value,
            ets=None,
            soft_edge=soft,
            escalated=False,
            human_decided=human_decided,
        )
        self.trajectory.steps.append(rec)
        self.trajectory.disruption_executed = self.env.disruption_executed
        if out.done:
            self.trajectory.terminal_status = self.env.terminal_status
        return rec

    # -- public stepping ------------------------------------------------------

    def run_until_escalation_or_terminal(self) -> EscalationEvent | None:
        """Advance until terminal; returns a pending event when paused."""
        while not self.env.done:
            if self.pending_event is not None:
                return self.pending_event
            mask, x_blue, q_blue, a_blue, q_red, a_red, div = self._proposals()
            th = self.thresholds
            tau = th.tau_div if th.gates_enabled else None
            arb = arbitrate(a_blue, a_red, mask, q_blue, q_red, div, tau, th.veto_margin)

            if arb.escalate:
                reason = "divergence_gate" if arb.reason == "divergence_gate" else "veto_deadlock"
                self.pending_event = self._escalation(reason, div, None, a_blue, a_red, x_blue, mask)
                return self.pending_event

            action = arb.executed
            if action == ESCALATE:
                self.pending_event = self._escalation("explicit_action", div, None, a_blue, a_red, x_blue, mask)
                return self.pending_event

            target = ACTIONS[action].target
            soft = target is not None and target != self.env.state and self.env.soft_edge(target)
            if soft and th.gates_enabled and tau is not None and div.value > tau * th.soft_edge_tightening:
                self.pending_event = self._escalation("divergence_gate_soft", div, None, a_blue, a_red, x_blue, mask)
                return self.pending_event

            rec = self._execute(action, a_blue, a_red, div, arb.vetoed, soft, human_decided=False)

            if not self.env.done:
                # post-execution explainability gate at the new state
                mask2 = self.env.mask()
                x2 = self.env.observe(None)
                net = self.blue or self.red
                breakdown, _ = compute_breakdown(
                    net, x2, mask2, div.value, self.ets_runtime, self.rng
                )
                rec.ets = breakdown
                if th.gates_enabled and should_escalate(
                    breakdown.ets_normalized, div.value, th.tau_escalate, tau
                ):
                    m2, xb2, qb2, ab2, qr2, ar2, div2 = self._proposals()
                    self.pending_event = self._escalation(
                        "ets_gate", div2, breakdown.ets_normalized, ab2, ar2, xb2, m2
                    )
                    rec.escalated = True
                    return self.pending_event
        return None

    def resume(self, decision: AdjudicationDecision) -> None:
        """Apply an adjudication decision to the paused incident and continue."""
        if self.pending_event is None:
            raise ParameterError("no pending escalation to resume")
        event = self.pending_event
        mask = self.env.mask()
        if decision.kind == "approve_blue":
            action = event.blue_proposal
        elif decision.kind == "approve_red_alternative":
            action = event.red_proposal
        elif decision.kind == "substitute":
            if decision.action not in ACTION_INDEX:
                raise ParameterError(f"unknown action {decision.action!r}")
            action = ACTION_INDEX[decision.action]
        elif decision.kind == "abort":
            action = ABORT
        else:
            raise ParameterError(f"unknown decision kind {decision.kind!r}")
        if not mask[action] or action == ESCALATE:
            admissible = [ACTIONS[i].name for i in np.flatnonzero(mask) if i != ESCALATE]
            raise ParameterError(
                f"action {ACTIONS[action].name!r} inadmissible here; admissible: {admissible}"
            )
        event.resolution = decision.kind
        self.pending_event = None
        self.env.context.human_reviewed = True

        tau = self.thresholds.tau_div
        div_exceeded = tau is not None and event.divergence > tau
        r_b, r_r = self.env.escalation_rewards(div_exceeded)
        div = DivergenceScore(event.divergence, self.thresholds.divergence_metric)
        rec = self._execute(
            action, event.blue_proposal, event.red_proposal, div,
            vetoed=False, soft=False, human_decided=True,
        )
        rec.escalated = True
        rec.r_blue += r_b
        rec.r_red += r_r

    def mark_unresolved(self) -> None:
        """Timeout path: terminal EscalatedToHuman without a decision."""
        if self.pending_event is None:
            raise ParameterError("no pending escalation")
        self.pending_event.resolution = "unresolved"
        self.pending_event = None
        self.env.force_escalated()
        self.trajectory.terminal_status = "EscalatedToHuman"


def run_incident(
    episode: Episode,
    blue: ValueNet | None,
    red: ValueNet | None,
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    thresholds: Thresholds,
    ets_runtime: EtsRuntime,
    variable_names: tuple[str, ...],
    adjudicator=None,
    frames_per_step: int = 2,
    t_max: int = 32,
    seed: int = 0,
) -> IncidentTrajectory:
    """Run one incident end to end with an automated adjudicator.

    Escalations with no adjudicator (or a returned None decision) terminate
    as unresolved hand-offs.
    """
    digest = hashlib.sha256(episode.episode_id.encode()).digest()
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest[:4], "big")])
    )
    env = IncidentEnv(mdp, builder, episode, frames_per_step, t_max)
    if t_max == 0:
        traj = IncidentTrajectory(episode_id=episode.episode_id, label=episode.label)
        traj.terminal_status = "TimedOut"
        return traj
    session = IncidentSession(
        env=env,
        blue=blue,
        red=red,
        thresholds=thresholds,
        ets_runtime=ets_runtime,
        builder=builder,
        variable_names=variable_names,
        rng=rng,
    )
    while True:
        event = session.run_until_escalation_or_terminal()
        if event is None:
            break
        decision = adjudicator(session, event) if adjudicator is not None else None
        if decision is None:
            session.mark_unresolved()
            break
        session.resume(decision)
    return session.trajectory
