"""Decision-state feature construction.

Raw layout (before projection), per decision step:

  host block    per host-channel variable: [window mean, window std, last value]
  net block     per net-channel variable: same three aggregates
  control block per control-channel variable: same three aggregates
  channel summaries   per channel kind (host, net, control), five
      permutation-invariant anomaly aggregates over that kind's variables:
      [max |window mean|, fraction of variables with |window mean| > 2,
       max window std, max(|mean| - std), max(std - |mean|)].
      The (|mean| high, std low) pattern is the signature of a variable held
      at an abnormal level; (std high, mean ~0) is a benign noise burst.
      These summaries do not depend on which variable is anomalous, so
      detection generalizes across attack recipes.
  context block documented bit layout:
      [0:N_STATES)            current investigation state, one-hot
      [N_STATES+0]            triaged flag
      [N_STATES+1]            host evidence collected
      [N_STATES+2]            net evidence collected
      [N_STATES+3]            evidence correlated
      [N_STATES+4]            host isolation executed
      [N_STATES+5]            flow blocking executed
      [N_STATES+6]            human adjudication already occurred
      [N_STATES+7]            trajectory crossed a soft roadmap edge
      [N_STATES+8 : +8+N_ACTIONS)  counterpart proposal, one-hot (zeros when unknown)

Aggregation windows clip at the episode start (no zero padding). Frames are
standardized with train-split statistics before aggregation. The final state
vector is a fixed seeded orthonormal-column projection of the raw layout to
``state_dim``; the map is frozen at construction so features stay stationary
across both policies and all evaluation phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .telemetry import CHANNEL_KINDS, DatasetSplit, Episode, ParameterError

#: Investigation states, in canonical order. Shared with the roadmap module.
STATES = (
    "InitialAlert",
    "TriageHost",
    "CollectHostEvidence",
    "CollectNetEvidence",
    "CorrelateEvidence",
    "ContainIsolateHost",
    "ContainBlockFlow",
    "ThreatMitigated",
    "BenignClosure",
    "EscalatedToHuman",
    "InvestigationAborted",
)
N_STATES = len(STATES)
N_ACTIONS = 18

CONTEXT_FLAGS = (
    "triaged",
    "host_evidence",
    "net_evidence",
    "correlated",
    "isolate_done",
    "block_done",
    "human_reviewed",
    "on_soft_path",
)
CONTEXT_BITS = N_STATES + len(CONTEXT_FLAGS) + N_ACTIONS


@dataclass
class InvestigationContext:
    """Mutable per-incident context mirrored into the state vector."""

    state: str = "InitialAlert"
    triaged: bool = False
    host_evidence: bool = False
    net_evidence: bool = False
    correlated: bool = False
    isolate_done: bool = False
    block_done: bool = False
    human_reviewed: bool = False
    on_soft_path: bool = False
    counterpart_proposal: int | None = None

    def copy(self) -> "InvestigationContext":
        return InvestigationContext(**self.__dict__)

    def to_bits(self) -> np.ndarray:
        bits = np.zeros(CONTEXT_BITS, dtype=np.float64)
        bits[STATES.index(self.state)] = 1.0
        for k, name in enumerate(CONTEXT_FLAGS):
            bits[N_STATES + k] = 1.0 if getattr(self, name) else 0.0
        if self.counterpart_proposal is not None:
            bits[N_STATES + len(CONTEXT_FLAGS) + int(self.counterpart_proposal)] = 1.0
        return bits


@dataclass
class FeatureBuilder:
    """Window aggregation + context encoding + fixed projection to state_dim."""

    channel_ids: tuple[str, ...]
    norm_mean: np.ndarray
    norm_scale: np.ndarray
    window_host: int = 8
    window_net: int = 8
    state_dim: int = 256
    projection_seed: int = 7
    projection: np.ndarray = field(init=False, repr=False)
    _cache: dict[str, np.ndarray] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.window_host < 1 or self.window_net < 1:
            raise ParameterError("aggregation windows must be >= 1")
        d_raw = self.raw_dim
        if self.state_dim < d_raw:
            raise ParameterError(
                f"state_dim {self.state_dim} smaller than raw layout {d_raw}"
            )
        rng = np.random.default_rng(np.random.SeedSequence([self.projection_seed, 0xF0F0]))
        g = rng.standard_normal((self.state_dim, d_raw))
        q, _ = np.linalg.qr(g)  # orthonormal columns: norm-preserving embedding
        self.projection = q

    @property
    def telemetry_dim(self) -> int:
        return len(self.channel_ids)

    @property
    def raw_dim(self) -> int:
        return 3 * self.telemetry_dim + 5 * len(CHANNEL_KINDS) + CONTEXT_BITS

    def window_for(self, kind: str) -> int:
        return self.window_host if kind == "host" else self.window_net

    def _stats(self, episode: Episode) -> np.ndarray:
        """Per-frame telemetry aggregates + channel summaries, cached per episode."""
        cached = self._cache.get(episode.episode_id)
        if cached is not None:
            return cached
        std_frames = (episode.values - self.norm_mean) / self.norm_scale
        horizon, d = std_frames.shape
        per_var = np.zeros((horizon, 3 * d))
        for j in range(d):
            w = self.window_for(self.channel_ids[j])
            col = std_frames[:, j]
            for t in range(horizon):
                lo = max(0, t - w + 1)  # window clips at episode start
                seg = col[lo : t + 1]
                per_var[t, 3 * j] = seg.mean()
                per_var[t, 3 * j + 1] = seg.std()
                per_var[t, 3 * j + 2] = col[t]
        summaries = np.zeros((horizon, 5 * len(CHANNEL_KINDS)))
        for k, kind in enumerate(CHANNEL_KINDS):
            cols = [j for j in range(d) if self.channel_ids[j] == kind]
            if not cols:
                continue
            means = per_var[:, [3 * j for j in cols]]
            stds = per_var[:, [3 * j + 1 for j in cols]]
            am = np.abs(means)
            summaries[:, 5 * k + 0] = am.max(axis=1)
            summaries[:, 5 * k + 1] = (am > 2.0).mean(axis=1)
            summaries[:, 5 * k + 2] = stds.max(axis=1)
            summaries[:, 5 * k + 3] = (am - stds).max(axis=1)
            summaries[:, 5 * k + 4] = (stds - am).max(axis=1)
        out = np.concatenate([per_var, summaries], axis=1)
        self._cache[episode.episode_id] = out
        return out

    def raw_vector(self, episode: Episode, t: int, context: InvestigationContext) -> np.ndarray:
        if not 0 <= t < episode.horizon:
            raise IndexError(f"t={t} outside episode horizon {episode.horizon}")
        stats = self._stats(episode)[t]
        return np.concatenate([stats, context.to_bits()])

    def build(self, episode: Episode, t: int, context: InvestigationContext) -> np.ndarray:
        """StateVector x_t of dimension ``state_dim`` (float32)."""
        raw = self.raw_vector(episode, t, context)
        return (self.projection @ raw).astype(np.float32)

    def raw_to_state(self, raw: np.ndarray) -> np.ndarray:
        return (self.projection @ raw).astype(np.float32)

    def attribution_to_telemetry(self, grad_x: np.ndarray) -> np.ndarray:
        """Pull a state-space gradient back to per-telemetry-variable magnitude.

        Chain rule through the fixed projection, then sum of absolute
        contributions over each variable's three aggregate slots.
        """
        raw_grad = self.projection.T @ grad_x.astype(np.float64)
        tele = np.abs(raw_grad[: 3 * self.telemetry_dim]).reshape(self.telemetry_dim, 3)
        return tele.sum(axis=1)


def build_state_vector(
    episode: Episode,
    t: int,
    context: InvestigationContext,
    builder: FeatureBuilder,
) -> np.ndarray:
    """Functional entry point over FeatureBuilder.build."""
    return builder.build(episode, t, context)


def feature_builder_from_split(
    split: DatasetSplit,
    channel_ids: tuple[str, ...],
    window_host: int = 8,
    window_net: int = 8,
    state_dim: int = 256,
    projection_seed: int = 7,
) -> FeatureBuilder:
    return FeatureBuilder(
        channel_ids=channel_ids,
        norm_mean=split.norm_mean,
        norm_scale=split.norm_scale,
        window_host=window_host,
        window_net=window_net,
        state_dim=state_dim,
        projection_seed=projection_seed,
    )
