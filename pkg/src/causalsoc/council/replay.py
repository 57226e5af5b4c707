"""Prioritized experience replay with proportional sampling."""

from __future__ import annotations

import numpy as np

from ..telemetry import ParameterError


class MaskSafetyError(AssertionError):
    """An inadmissible (state, executed action) pair reached the buffer."""


class ReplayBuffer:
    """FIFO ring buffer with proportional priorities p_i = |td| + priority_eps.

    Importance weights are (N * P(i))^-beta, normalized by the batch maximum;
    beta anneals from ``beta_start`` to 1 over ``beta_anneal_steps`` sampled
    batches. Every insert asserts that the executed action was admissible.
    """

    def __init__(
        self,
        capacity: int,
        state_dim: int,
        n_actions: int,
        priority_eps: float = 1e-3,
        beta_start: float = 0.4,
        beta_anneal_steps: int = 100_000,
        dtype=np.float32,
    ):
        if capacity < 1:
            raise ParameterError("capacity must be >= 1")
        self.capacity = capacity
        self.priority_eps = priority_eps
        self.beta_start = beta_start
        self.beta_anneal_steps = beta_anneal_steps
        self.x = np.zeros((capacity, state_dim), dtype=dtype)
        self.action = np.zeros(capacity, dtype=np.int16)
        self.reward = np.zeros(capacity, dtype=dtype)
        self.x_next = np.zeros((capacity, state_dim), dtype=dtype)
        self.next_mask = np.zeros((capacity, n_actions), dtype=bool)
        self.done = np.zeros(capacity, dtype=bool)
        self.priority = np.zeros(capacity, dtype=np.float64)
        self.size = 0
        self.head = 0
        self.samples_drawn = 0

    def __len__(self) -> int:
        return self.size

    def add(
        self,
        x: np.ndarray,
        action: int,
        reward: float,
        x_next: np.ndarray,
        next_mask: np.ndarray,
        done: bool,
        current_mask: np.ndarray,
    ) -> None:
        if not current_mask[action]:
            raise MaskSafetyError(f"executed action {action} was masked out")
        i = self.head
        self.x[i] = x
        self.action[i] = action
        self.reward[i] = reward
        self.x_next[i] = x_next
        self.next_mask[i] = next_mask
        self.done[i] = done
        max_p = self.priority[: self.size].max() if self.size else 1.0
        self.priority[i] = max(max_p, self.priority_eps)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def beta(self) -> float:
        frac = min(1.0, self.samples_drawn / max(1, self.beta_anneal_steps))
        return self.beta_start + (1.0 - self.beta_start) * frac

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ParameterError("cannot sample from an empty buffer")
        p = self.priority[: self.size]
        cdf = np.cumsum(p)
        total = cdf[-1]
        draws = rng.random(batch_size) * total
        idx = np.searchsorted(cdf, draws, side="left")
        idx = np.minimum(idx, self.size - 1)
        probs = p[idx] / total
        beta = self.beta()
        self.samples_drawn += 1
        weights = (self.size * probs) ** (-beta)
        weights = weights / weights.max()
        return {
            "indices": idx,
            "x": self.x[idx],
            "action": self.action[idx].astype(int),
            "reward": self.reward[idx].astype(np.float64),
            "x_next": self.x_next[idx],
            "next_mask": self.next_mask[idx],
            "done": self.done[idx],
            "is_weights": weights,
        }

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        self.priority[indices] = np.abs(td_errors) + self.priority_eps
