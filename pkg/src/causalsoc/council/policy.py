"""Inter-policy divergence scoring and proposal arbitration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..roadmap import ACTIONS, DISRUPTIVE_ACTIONS, EVIDENCE_CLASS_ACTIONS
from ..telemetry import ParameterError
from .net import masked_greedy, masked_softmax

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DivergenceScore:
    value: float
    metric: str  # "js_policy" | "l2_q"

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ParameterError("divergence must be non-negative")
        if self.metric == "js_policy" and self.value > LN2 + 1e-9:
            raise ParameterError("Jensen-Shannon policy divergence exceeds ln 2")


def divergence(
    q_blue: np.ndarray,
    q_red: np.ndarray,
    mask: np.ndarray,
    metric: str = "js_policy",
) -> DivergenceScore:
    """Disagreement between the two policies' admissible action preferences.

    js_policy: Jensen-Shannon divergence (natural log, bounded by ln 2)
    between the masked softmax distributions at temperature 1.
    l2_q: euclidean distance between the admissible Q entries.
    """
    if q_blue.shape != q_red.shape or q_blue.shape != mask.shape:
        raise ParameterError("divergence inputs must share the action mask shape")
    if metric == "l2_q":
        d = float(np.linalg.norm((q_blue - q_red)[mask]))
        return DivergenceScore(value=d, metric=metric)
    if metric != "js_policy":
        raise ParameterError(f"unknown divergence metric {metric!r}")
    p = masked_softmax(q_blue, mask)
    q = masked_softmax(q_red, mask)
    m = 0.5 * (p + q)

    def kl(a: np.ndarray, b: np.ndarray) -> float:
        live = a > 0
        return float(np.sum(a[live] * np.log(a[live] / b[live])))

    d = 0.5 * kl(p, m) + 0.5 * kl(q, m)
    return DivergenceScore(value=min(max(d, 0.0), LN2), metric=metric)


@dataclass(frozen=True)
class Arbitration:
    executed: int | None  # None when escalating
    escalate: bool
    vetoed: bool  # Red substituted an evidence action for a disruptive proposal
    reason: str


def arbitrate(
    a_blue: int,
    a_red: int,
    mask: np.ndarray,
    q_blue: np.ndarray,
    q_red: np.ndarray,
    div: DivergenceScore,
    tau_div: float | None,
    veto_margin: float = 1.0,
) -> Arbitration:
    """Resolve the executed action from the two proposals.

    Order: divergence gate, then the Red veto on disruptive proposals, then
    Blue's proposal. The veto fires when Blue proposes a containment action
    and Red's value gap against it exceeds ``veto_margin``; the substituted
    action is Red's best admissible evidence-class action.
    """
    if not (mask[a_blue] and mask[a_red]):
        raise ParameterError("arbitrate received an inadmissible proposal")
    if tau_div is not None and div.value > tau_div:
        return Arbitration(executed=None, escalate=True, vetoed=False, reason="divergence_gate")
    if a_blue in DISRUPTIVE_ACTIONS and a_blue != a_red:
        gap = float(q_red[a_red]) - float(q_red[a_blue])
        if gap > veto_margin:
            evidence = [a for a in EVIDENCE_CLASS_ACTIONS if mask[a]]
            if evidence:
                sub = max(evidence, key=lambda a: (float(q_red[a]), -a))
                return Arbitration(
                    executed=int(sub),
                    escalate=False,
                    vetoed=True,
                    reason=f"red_veto:{ACTIONS[sub].name}",
                )
            if a_red not in DISRUPTIVE_ACTIONS:
                return Arbitration(executed=a_red, escalate=False, vetoed=True, reason="red_veto:counter")
            return Arbitration(executed=None, escalate=True, vetoed=False, reason="veto_deadlock")
    return Arbitration(executed=a_blue, escalate=False, vetoed=False, reason="blue")
