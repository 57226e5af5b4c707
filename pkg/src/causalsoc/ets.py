"""Explainability-Transparency Score: sub-scores, calibration, escalation gate.

ETS aggregates three bounded sub-scores on the probability simplex:

  clarity      concentration/stability of the explanation for the chosen
               action (attribution entropy, first-order fidelity of the
               value function, action-ranking stability under probes)
  completeness evidential coverage around the state (replay-buffer density,
               neighborhood action entropy, top-k attribution diversity)
  confidence   certainty in the chosen action (softmax margin, bootstrap
               Q-variance, inter-policy divergence)

The confidence variance/divergence terms support two bounded forms,
``inverse`` 1/(1+v) (default) and ``exp`` e^(-v); both appear in the design
sources and the choice is a config switch. The aggregate is logistic-
normalized with calibration-split statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .telemetry import ParameterError


def _check_simplex(v: tuple[float, float, float], name: str) -> None:
    if any(x < 0 for x in v) or abs(sum(v) - 1.0) > 1e-9:
        raise ParameterError(f"{name} must be non-negative and sum to 1, got {v}")


UNIFORM = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True)
class EtsWeights:
    w: tuple[float, float, float] = UNIFORM
    alpha: tuple[float, float, float] = UNIFORM
    beta: tuple[float, float, float] = UNIFORM
    gamma_c: tuple[float, float, float] = UNIFORM
    mu: float = 0.5
    sigma_cal: float = 0.15
    confidence_form: str = "inverse"  # "inverse" -> 1/(1+v), "exp" -> e^(-v)

    def __post_init__(self) -> None:
        for name in ("w", "alpha", "beta", "gamma_c"):
            _check_simplex(getattr(self, name), name)
        if self.sigma_cal <= 0:
            raise ParameterError("sigma_cal must be positive")
        if self.confidence_form not in ("inverse", "exp"):
            raise ParameterError(f"unknown confidence form {self.confidence_form!r}")

    def to_dict(self) -> dict:
        return {
            "w": list(self.w),
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "gamma_c": list(self.gamma_c),
            "mu": self.mu,
            "sigma_cal": self.sigma_cal,
            "confidence_form": self.confidence_form,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EtsWeights":
        return cls(
            w=tuple(doc["w"]),
            alpha=tuple(doc["alpha"]),
            beta=tuple(doc["beta"]),
            gamma_c=tuple(doc["gamma_c"]),
            mu=float(doc["mu"]),
            sigma_cal=float(doc["sigma_cal"]),
            confidence_form=doc.get("confidence_form", "inverse"),
        )


@dataclass
class EtsBreakdown:
    clarity: float
    completeness: float
    confidence: float
    ets_raw: float
    ets_normalized: float
    sub_metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "clarity": self.clarity,
            "completeness": self.completeness,
            "confidence": self.confidence,
            "ets_raw": self.ets_raw,
            "ets_normalized": self.ets_normalized,
            "sub_metrics": dict(self.sub_metrics),
        }


@dataclass(frozen=True)
class ReliabilityTarget:
    scenario_id: str
    value: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"reliability target must be in [0, 1], got {self.value}")


def _entropy(p: np.ndarray) -> float:
    live = p > 0
    return float(-(p[live] * np.log(p[live])).sum())


def _clip01(x: float) -> float:
    return float(min(max(x, 0.0), 1.0))


def clarity(
    attributions: np.ndarray,
    q_center: float,
    probe_offsets: np.ndarray,
    probe_q: np.ndarray,
    gradient: np.ndarray,
    probe_top_preserved: np.ndarray,
    alpha: tuple[float, float, float] = UNIFORM,
) -> tuple[float, dict[str, float]]:
    """Attribution concentration + first-order fidelity + ranking stability.

    ``attributions`` is a distribution over the d state features;
    ``probe_q`` holds Q(a*) at ``probe_offsets`` displacements around the
    state, and fidelity is the R^2 of the gradient-based first-order model.
    """
    d = len(attributions)
    if d < 2:
        raise ParameterError("attribution entropy needs at least two features")
    a = np.asarray(attributions, dtype=float)
    if a.min() < -1e-12 or abs(a.sum() - 1.0) > 1e-6:
        raise ParameterError("attributions must form a distribution")
    ent_term = 1.0 - _entropy(a) / math.log(d)

    pred = q_center + probe_offsets @ gradient
    ss_res = float(((probe_q - pred) ** 2).sum())
    ss_tot = float(((probe_q - probe_q.mean()) ** 2).sum())
    if ss_tot < 1e-12:
        fidelity = 1.0 if ss_res < 1e-9 else 0.0
    else:
        fidelity = max(0.0, 1.0 - ss_res / ss_tot)

    stability = float(np.mean(probe_top_preserved)) if len(probe_top_preserved) else 1.0
    value = alpha[0] * _clip01(ent_term) + alpha[1] * _clip01(fidelity) + alpha[2] * _clip01(stability)
    return _clip01(value), {
        "attribution_entropy": _entropy(a),
        "entropy_term": _clip01(ent_term),
        "local_fidelity": _clip01(fidelity),
        "ranking_stability": _clip01(stability),
    }


def completeness(
    x: np.ndarray,
    buffer_states: np.ndarray,
    buffer_actions: np.ndarray,
    attributions: np.ndarray,
    n_actions: int,
    neighborhood_radius: float = 0.5,
    ref_density: float = 0.01,
    top_k: int = 5,
    beta: tuple[float, float, float] = UNIFORM,
) -> tuple[float, dict[str, float], bool]:
    """Buffer density + neighbor action entropy + attribution diversity.

    Raw density fractions are tiny at desk-scale buffers, so the coverage
    term is rescaled by min(1, density / ref_density). Returns
    (value, sub-metrics, empty_buffer_flag).
    """
    if len(buffer_states) == 0:
        return 0.0, {"state_coverage": 0.0, "action_entropy": 0.0, "attribution_diversity": 0.0}, True
    dists = np.linalg.norm(buffer_states - x[None, :], axis=1)
    inside = dists <= neighborhood_radius
    raw_cov = float(inside.mean())
    coverage = min(1.0, raw_cov / ref_density)

    if inside.any():
        counts = np.bincount(buffer_actions[inside].astype(int), minlength=n_actions)
        p = counts / counts.sum()
        act_ent = _entropy(p) / math.log(n_actions)
    else:
        act_ent = 0.0

    a = np.asarray(attributions, dtype=float)
    k = min(top_k, len(a))
    top = np.sort(a)[::-1][:k]
    if top.sum() <= 0:
        diversity = 0.0
    else:
        diversity = _entropy(top / top.sum()) / math.log(k) if k > 1 else 0.0

    value = beta[0] * coverage + beta[1] * _clip01(act_ent) + beta[2] * _clip01(diversity)
    return _clip01(value), {
        "state_coverage_raw": raw_cov,
        "state_coverage": coverage,
        "action_entropy": _clip01(act_ent),
        "attribution_diversity": _clip01(diversity),
    }, False


def confidence(
    q: np.ndarray,
    mask: np.ndarray,
    q_variance: float,
    divergence_value: float,
    gamma_c: tuple[float, float, float] = UNIFORM,
    form: str = "inverse",
) -> tuple[float, dict[str, float]]:
    """Softmax margin + bounded variance term + bounded divergence term."""
    from .council.net import masked_softmax

    probs = masked_softmax(q, mask)
    order = np.sort(probs[mask])[::-1]
    margin = float(order[0] - order[1]) if len(order) > 1 else 1.0
    if form == "inverse":
        var_term = 1.0 / (1.0 + max(q_variance, 0.0))
        div_term = 1.0 / (1.0 + max(divergence_value, 0.0))
    elif form == "exp":
        var_term = math.exp(-max(q_variance, 0.0))
        div_term = math.exp(-max(divergence_value, 0.0))
    else:
        raise ParameterError(f"unknown confidence form {form!r}")
    value = gamma_c[0] * margin + gamma_c[1] * var_term + gamma_c[2] * div_term
    return _clip01(value), {
        "softmax_margin": margin,
        "variance_term": var_term,
        "divergence_term": div_term,
        "q_variance": q_variance,
        "divergence": divergence_value,
    }


def logistic(z: float) -> float:
    if z >= 0:
        e = math.exp(-z)
        return 1.0 / (1.0 + e)
    e = math.exp(z)
    return e / (1.0 + e)


def ets_from_subscores(
    clarity_value: float,
    completeness_value: float,
    confidence_value: float,
    weights: EtsWeights,
    sub_metrics: dict[str, float] | None = None,
) -> EtsBreakdown:
    for name, v in (
        ("clarity", clarity_value),
        ("completeness", completeness_value),
        ("confidence", confidence_value),
    ):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"{name} sub-score {v} outside [0, 1]")
    raw = (
        weights.w[0] * clarity_value
        + weights.w[1] * completeness_value
        + weights.w[2] * confidence_value
    )
    normalized = logistic((raw - weights.mu) / weights.sigma_cal)
    return EtsBreakdown(
        clarity=clarity_value,
        completeness=completeness_value,
        confidence=confidence_value,
        ets_raw=raw,
        ets_normalized=normalized,
        sub_metrics=dict(sub_metrics or {}),
    )


def should_escalate(
    ets_normalized: float,
    divergence_value: float,
    tau_escalate: float = 0.5,
    tau_div: float | None = None,
) -> bool:
    """Escalation gate: low explainability OR high policy disagreement."""
    if ets_normalized < tau_escalate:
        return True
    return tau_div is not None and divergence_value > tau_div


# ---------------------------------------------------------------------------
# Weight calibration on the probability simplex
# ---------------------------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    cond = u - css / ks > 0
    rho = int(np.max(ks[cond]))
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


@dataclass
class CalibrationResult:
    weights: EtsWeights
    residual: float
    spearman: float
    degenerate_targets: bool
    iterations: int


def calibrate(
    subscores: np.ndarray,
    targets: list[ReliabilityTarget] | np.ndarray,
    base: EtsWeights = EtsWeights(),
    max_iters: int = 5000,
    tol: float = 1e-12,
) -> CalibrationResult:
    """Least squares of raw ETS against oracle reliability targets on the simplex.

    Projected gradient descent from the uniform weights; mu and sigma_cal
    are then fit as the calibration-split mean/std of the fitted raw scores.
    """
    s = np.asarray(subscores, dtype=float)
    if s.ndim != 2 or s.shape[1] != 3:
        raise ParameterError("subscores must have shape (n, 3)")
    r = np.array(
        [t.value if isinstance(t, ReliabilityTarget) else float(t) for t in targets]
    )
    if len(r) != len(s):
        raise ParameterError("subscores and targets must align")
    if len(np.unique(s.round(12), axis=0)) < 3:
        raise ParameterError("need at least 3 scenarios with distinct sub-score vectors")

    degenerate = bool(np.allclose(r, r[0]))
    if degenerate:
        w = np.array(UNIFORM)
        iters = 0
    else:
        w = np.array(UNIFORM)
        lip = 2.0 * float(np.linalg.eigvalsh(s.T @ s).max())
        lr = 1.0 / max(lip, 1e-9)
        iters = 0
        for iters in range(1, max_iters + 1):
            grad = 2.0 * s.T @ (s @ w - r)
            w_new = project_simplex(w - lr * grad)
            if np.max(np.abs(w_new - w)) < tol:
                w = w_new
                break
            w = w_new

    fitted_raw = s @ w
    mu = float(fitted_raw.mean())
    sigma = float(max(fitted_raw.std(), 0.05))
    weights = EtsWeights(
        w=tuple(float(x) for x in w),
        alpha=base.alpha,
        beta=base.beta,
        gamma_c=base.gamma_c,
        mu=mu,
        sigma_cal=sigma,
        confidence_form=base.confidence_form,
    )
    residual = float(((fitted_raw - r) ** 2).sum())
    normalized = np.array([logistic((x - mu) / sigma) for x in fitted_raw])
    if degenerate or np.allclose(normalized, normalized[0]):
        rho = 0.0
    else:
        rho = float(stats.spearmanr(normalized, r).statistic)
    return CalibrationResult(
        weights=weights,
        residual=residual,
        spearman=rho,
        degenerate_targets=degenerate,
        iterations=iters,
    )


def grid_search_weights(subscores: np.ndarray, targets: np.ndarray, step: float = 0.01):
    """Brute-force simplex search; independent oracle for calibration tests."""
    s = np.asarray(subscores, dtype=float)
    r = np.asarray(targets, dtype=float)
    best_w, best_loss = None, np.inf
    n = int(round(1.0 / step))
    for i in range(n + 1):
        for j in range(n + 1 - i):
            w = np.array([i * step, j * step, 1.0 - (i + j) * step])
            loss = float(((s @ w - r) ** 2).sum())
            if loss < best_loss - 1e-15:
                best_loss, best_w = loss, w
    return best_w, best_loss
