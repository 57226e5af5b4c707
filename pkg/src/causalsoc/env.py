"""Incident micro-environment: one telemetry episode driven through the MDP-DAG.

The investigation advances one decision step at a time; each step consumes
``frames_per_step`` telemetry frames so evidence accumulates while the
investigation progresses. Ground-truth outcome flags (used only for reward
computation and evaluation, never exposed to the policies) derive from the
episode label and the evidence flags accumulated in the context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureBuilder, InvestigationContext
from .roadmap import (
    DISRUPTIVE_STATES,
    TERMINAL_STATES,
    ConstrainedMdp,
    OutcomeFlags,
    reward,
)
from .telemetry import Episode, ParameterError

EVIDENCE_FLAG_BY_STATE = {
    "TriageHost": "triaged",
    "CollectHostEvidence": "host_evidence",
    "CollectNetEvidence": "net_evidence",
    "CorrelateEvidence": "correlated",
}


@dataclass
class StepOutcome:
    prev_state: str
    action: int
    next_state: str
    r_blue: float
    r_red: float
    flags: OutcomeFlags
    done: bool
    terminal_status: str | None  # investigation state name or "TimedOut"


@dataclass
class IncidentEnv:
    mdp: ConstrainedMdp
    builder: FeatureBuilder
    episode: Episode
    frames_per_step: int = 2
    t_max: int = 32
    state: str = "InitialAlert"
    context: InvestigationContext = field(default_factory=InvestigationContext)
    step_idx: int = 0
    frame_idx: int = 0
    done: bool = False
    terminal_status: str | None = None
    disruption_executed: bool = False

    def __post_init__(self) -> None:
        if self.t_max < 0:
            raise ParameterError("t_max must be >= 0")
        if self.t_max == 0:
            self.done = True
            self.terminal_status = "TimedOut"

    @property
    def is_attack(self) -> bool:
        return self.episode.label == "attack"

    def mask(self) -> np.ndarray:
        return self.mdp.action_mask(self.state)

    def observe(self, counterpart_proposal: int | None = None) -> np.ndarray:
        ctx = self.context.copy()
        ctx.state = self.state
        ctx.counterpart_proposal = counterpart_proposal
        return self.builder.build(self.episode, self.frame_idx, ctx)

    def evidence_complete(self) -> bool:
        c = self.context
        return c.host_evidence and c.net_evidence and c.correlated

    def soft_edge(self, next_state: str) -> bool:
        cls = self.mdp.roadmap.constraint_class.get((self.state, next_state))
        return cls == "soft"

    def apply(
        self,
        action: int,
        red_proposal: int | None = None,
        vetoed: bool = False,
        uncertainty_high: bool = False,
    ) -> StepOutcome:
        """Execute an admissible action; returns team rewards and outcome flags."""
        if self.done:
            raise ParameterError("incident already terminated")
        prev = self.state
        next_state = self.mdp.step_state(prev, action)

        flags = OutcomeFlags(uncertainty_high=uncertainty_high)
        ctx = self.context
        if next_state != prev and self.soft_edge(next_state):
            ctx.on_soft_path = True

        flag_name = EVIDENCE_FLAG_BY_STATE.get(next_state)
        if flag_name and not getattr(ctx, flag_name):
            setattr(ctx, flag_name, True)
            flags.info_gain = True
        if next_state == "ContainIsolateHost":
            ctx.isolate_done = True
        if next_state == "ContainBlockFlow":
            ctx.block_done = True

        if next_state in DISRUPTIVE_STATES:
            self.disruption_executed = True
            if not self.is_attack:
                flags.false_positive_cost = True
                flags.red_endorsed_false_positive = red_proposal == action
        if vetoed:
            if self.is_attack:
                flags.wrongly_vetoed_justified = True
            else:
                flags.prevented_unjustified = True

        terminal_status = None
        if next_state in TERMINAL_STATES:
            flags.terminal = True
            terminal_status = next_state
            if next_state == "ThreatMitigated":
                if self.is_attack and self.evidence_complete():
                    flags.verified_mitigation = True
                elif not self.is_attack:
                    flags.false_positive_cost = True
                    flags.red_endorsed_false_positive = red_proposal == action
            elif next_state == "BenignClosure":
                if self.is_attack:
                    flags.missed_threat = True
                else:
                    flags.correct_benign_closure = True
            elif next_state == "InvestigationAborted":
                if self.is_attack:
                    flags.missed_threat = True

        r_blue = reward(self.mdp, prev, action, next_state, flags, "blue")
        r_red = reward(self.mdp, prev, action, next_state, flags, "red")

        self.state = next_state
        self.step_idx += 1
        self.frame_idx = min(self.frame_idx + self.frames_per_step, self.episode.horizon - 1)
        if terminal_status is not None:
            self.done = True
            self.terminal_status = terminal_status
        elif self.step_idx >= self.t_max:
            self.done = True
            self.terminal_status = "TimedOut"
            from .roadmap import REWARD_TABLE

            r_blue += REWARD_TABLE["timeout"]["blue"]
            r_red += REWARD_TABLE["timeout"]["red"]

        return StepOutcome(
            prev_state=prev,
            action=action,
            next_state=self.state,
            r_blue=r_blue,
            r_red=r_red,
            flags=flags,
            done=self.done,
            terminal_status=self.terminal_status,
        )

    def force_escalated(self) -> None:
        """Terminal hand-off without an executed transition (unresolved escalation)."""
        self.state = "EscalatedToHuman"
        self.done = True
        self.terminal_status = "EscalatedToHuman"

    def escalation_rewards(self, divergence_exceeded: bool) -> tuple[float, float]:
        """Escalation event reward pair (no transition executes)."""
        from .roadmap import REWARD_TABLE

        r_blue = REWARD_TABLE["escalation"]["blue"]
        r_red = REWARD_TABLE["escalation"]["red"] if divergence_exceeded else 0.0
        return r_blue, r_red
