"""Shadow-Jitter bounded telemetry manipulation and budget auditing.

The adversary is the bounded tuple (epsilon, kappa, delta_max, rho):
amplitude-bounded additive perturbation on at most a kappa-fraction of
channels, bounded per-channel replay delay, and bounded-volume historical
poisoning. Amplitude draws are projected onto the lp ball, so the bound
holds exactly for every frame rather than in expectation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .telemetry import Episode, ParameterError


class BudgetViolation(ValueError):
    """Structural mismatch between paired episodes under audit."""


@dataclass(frozen=True)
class ShadowJitterConfig:
    epsilon: float = 0.5
    p_norm: float = np.inf  # one of {1, 2, inf}
    kappa: float = 0.25
    delta_max: int = 2
    rho: float = 0.0
    channel_seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ParameterError("epsilon must be non-negative")
        if self.p_norm not in (1, 2, np.inf, float("inf")):
            raise ParameterError(f"p_norm must be 1, 2 or inf, got {self.p_norm}")
        if not 0 < self.kappa <= 1:
            raise ParameterError("kappa must be in (0, 1]")
        if self.delta_max < 0:
            raise ParameterError("delta_max must be non-negative")
        if not 0 <= self.rho < 1:
            raise ParameterError("rho must be in [0, 1)")


@dataclass
class BudgetReport:
    max_perturbation_norm: float
    channel_fraction: float
    max_delay: int
    poison_fraction: float
    passed: bool
    violations: list[str]


def select_channels(d: int, config: ShadowJitterConfig) -> tuple[np.ndarray, bool]:
    """Deterministic compromised-channel subset of size floor(kappa * d).

    Returns (sorted index array, warned) where warned flags kappa*d < 1,
    which forces an empty set.
    """
    if d < 1:
        raise ParameterError("dimension must be >= 1")
    count = int(np.floor(config.kappa * d))
    if count < 1:
        return np.array([], dtype=int), True
    rng = np.random.default_rng(np.random.SeedSequence([config.channel_seed, 0xC4A7]))
    chosen = rng.choice(d, size=count, replace=False)
    return np.sort(chosen), False


def _project_lp_ball(delta: np.ndarray, epsilon: float, p_norm: float) -> np.ndarray:
    """Project onto the lp ball of radius epsilon (support preserved)."""
    if epsilon == 0:
        return np.zeros_like(delta)
    if p_norm == np.inf or p_norm == float("inf"):
        return np.clip(delta, -epsilon, epsilon)
    norm = float(np.linalg.norm(delta, ord=p_norm))
    if norm <= epsilon or norm == 0.0:
        return delta
    if p_norm == 2:
        return delta * (epsilon / norm)
    # p = 1: simplex projection of |delta| onto the l1 ball, signs restored
    sign = np.sign(delta)
    mag = np.abs(delta)
    u = np.sort(mag)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(u) + 1)
    cond = u - (css - epsilon) / ks > 0
    k = int(np.max(ks[cond]))
    theta = (css[k - 1] - epsilon) / k
    return sign * np.maximum(mag - theta, 0.0)


def perturb_values(
    values: np.ndarray,
    channels: np.ndarray,
    config: ShadowJitterConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """frame + delta with delta supported on the channel set, ||delta||_p <= eps."""
    out = values.astype(float).copy()
    if channels.size == 0 or config.epsilon == 0:
        return out
    delta = np.zeros_like(out)
    # draw at the ball boundary scale, then project for the exact bound
    raw = rng.standard_normal(channels.size) * config.epsilon
    delta[channels] = raw
    delta = _project_lp_ball(delta, config.epsilon, config.p_norm)
    return out + delta


def perturb_frame(
    episode_values: np.ndarray,
    channels: np.ndarray,
    config: ShadowJitterConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    return perturb_values(episode_values, channels, config, rng)


def apply_temporal_shift(
    episode: Episode,
    channels: np.ndarray,
    config: ShadowJitterConfig,
    rng: np.random.Generator,
) -> Episode:
    """Replay compromised channels from t - Delta_i(t); boundary frames keep originals."""
    if config.delta_max >= episode.horizon:
        raise ParameterError(
            f"delta_max {config.delta_max} must be < horizon {episode.horizon}"
        )
    values = episode.values.copy()
    if channels.size and config.delta_max > 0:
        for i in channels:
            delays = rng.integers(0, config.delta_max + 1, size=episode.horizon)
            src = np.arange(episode.horizon) - delays
            keep = src < 0  # undefined region: preserve original values
            src = np.where(keep, np.arange(episode.horizon), src)
            values[:, i] = episode.values[src, i]
    return dataclasses.replace(episode, values=values)


def perturb_episode(
    episode: Episode,
    channels: np.ndarray,
    config: ShadowJitterConfig,
    rng: np.random.Generator,
) -> Episode:
    """Temporal shift followed by per-frame amplitude perturbation."""
    shifted = apply_temporal_shift(episode, channels, config, rng)
    values = np.stack(
        [perturb_values(shifted.values[t], channels, config, rng) for t in range(shifted.horizon)]
    )
    return dataclasses.replace(shifted, values=values)


def poison_dataset(
    train: list[Episode],
    config: ShadowJitterConfig,
    rng: np.random.Generator,
) -> list[Episode]:
    """Union of the original set with floor(rho * |D|) perturbed copies.

    Copies keep their labels and stay within the amplitude ball of their
    sources; marginal plausibility is enforced through the epsilon bound.
    """
    count = int(np.floor(config.rho * len(train)))
    if count == 0:
        return list(train)
    out = list(train)
    channels_by_dim: dict[int, np.ndarray] = {}
    pick = rng.choice(len(train), size=count, replace=False)
    for j, src_idx in enumerate(sorted(int(i) for i in pick)):
        src = train[src_idx]
        if src.dim not in channels_by_dim:
            channels_by_dim[src.dim], _ = select_channels(src.dim, config)
        channels = channels_by_dim[src.dim]
        values = np.stack(
            [perturb_values(src.values[t], channels, config, rng) for t in range(src.horizon)]
        )
        out.append(
            dataclasses.replace(
                src,
                episode_id=f"{src.episode_id}-poison{j}",
                values=values,
            )
        )
    return out


def validate_budget(
    original: Episode,
    manipulated: Episode,
    config: ShadowJitterConfig,
    poison_fraction: float = 0.0,
) -> BudgetReport:
    """Audit an (original, manipulated) pair against (epsilon, kappa, delta_max, rho).

    Delay is audited structurally: per compromised channel, each manipulated
    value must occur in the original channel within the delay window. The
    amplitude audit tolerates the reconstruction slack of composed shift +
    additive noise by checking the residual after the best in-window match.
    """
    if original.values.shape != manipulated.values.shape:
        raise BudgetViolation(
            f"shape mismatch {original.values.shape} vs {manipulated.values.shape}"
        )
    violations: list[str] = []
    channels, _ = select_channels(original.dim, config)
    chan_set = set(int(c) for c in channels)
    d = original.dim
    horizon = original.horizon

    diff = manipulated.values - original.values
    off_channels = [j for j in range(d) if j not in chan_set]
    if off_channels:
        off = np.abs(diff[:, off_channels])
        if off.max(initial=0.0) > 1e-12:
            t, k = np.unravel_index(np.argmax(off), off.shape)
            violations.append(
                f"channel {off_channels[k]} outside the compromised set changed at frame {t}"
            )

    max_norm = 0.0
    max_delay_seen = 0
    for t in range(horizon):
        # best per-channel in-window source explains the replay component
        residual = np.zeros(d)
        for j in chan_set:
            lo = max(0, t - config.delta_max)
            window = original.values[lo : t + 1, j]
            errs = np.abs(manipulated.values[t, j] - window)
            # prefer the newest matching frame so ties report the smallest delay
            k = len(errs) - 1 - int(np.argmin(errs[::-1]))
            residual[j] = manipulated.values[t, j] - window[k]
            if errs[k] <= config.epsilon + 1e-9:
                max_delay_seen = max(max_delay_seen, (t - lo) - k)
        norm = float(np.linalg.norm(residual, ord=config.p_norm)) if chan_set else 0.0
        max_norm = max(max_norm, norm)
        if norm > config.epsilon + 1e-9:
            violations.append(f"perturbation norm {norm:.6g} exceeds epsilon at frame {t}")
            break

    channel_fraction = len(chan_set) / d if d else 0.0
    if channel_fraction > config.kappa + 1e-12:
        violations.append(f"channel fraction {channel_fraction:.3f} exceeds kappa")
    if poison_fraction > config.rho + 1e-12:
        violations.append(f"poison fraction {poison_fraction:.3f} exceeds rho")

    return BudgetReport(
        max_perturbation_norm=max_norm,
        channel_fraction=channel_fraction,
        max_delay=max_delay_seen,
        poison_fraction=poison_fraction,
        passed=not violations,
        violations=violations,
    )
