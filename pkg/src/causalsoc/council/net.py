"""Masked action-value network with hand-written exact gradients.

Architecture: linear -> ReLU -> layer norm per hidden layer, then a linear
action-score head. A small ensemble of extra linear heads rides on the last
hidden representation (stop-gradient into the trunk) and supplies the
bootstrap variance of Q used by the confidence scoring; the main training
dynamics stay those of a plain double-DQN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..telemetry import ParameterError

LN_EPS = 1e-5


class NumericalError(RuntimeError):
    """Loss or gradients became non-finite."""


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class ValueNet:
    input_dim: int
    hidden: tuple[int, ...] = (256, 256, 128)
    n_actions: int = 18
    n_boot_heads: int = 5
    seed: int = 0
    dtype: type = np.float32
    params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.params:
            return
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x9E7]))
        dims = (self.input_dim, *self.hidden)
        p: dict[str, np.ndarray] = {}
        for i in range(len(self.hidden)):
            p[f"W{i}"] = _he_init(rng, dims[i], dims[i + 1], self.dtype)
            p[f"b{i}"] = np.zeros(dims[i + 1], dtype=self.dtype)
            p[f"g{i}"] = np.ones(dims[i + 1], dtype=self.dtype)
            p[f"beta{i}"] = np.zeros(dims[i + 1], dtype=self.dtype)
        p["Wh"] = (_he_init(rng, self.hidden[-1], self.n_actions, self.dtype) * 0.1)
        p["bh"] = np.zeros(self.n_actions, dtype=self.dtype)
        for k in range(self.n_boot_heads):
            p[f"Wboot{k}"] = (_he_init(rng, self.hidden[-1], self.n_actions, self.dtype) * 0.1)
            p[f"bboot{k}"] = np.zeros(self.n_actions, dtype=self.dtype)
        self.params = p

    # -- forward ------------------------------------------------------------

    def forward(self, x: np.ndarray, with_cache: bool = False):
        """Action scores for a batch (B, input_dim) -> (B, n_actions)."""
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if x.shape[1] != self.input_dim:
            raise ParameterError(f"input dim {x.shape[1]} != {self.input_dim}")
        p = self.params
        h = x
        cache = {"x": x, "pre": [], "xhat": [], "sigma": [], "h": []}
        for i in range(len(self.hidden)):
            pre = h @ p[f"W{i}"] + p[f"b{i}"]
            act = np.maximum(pre, 0)
            mu = act.mean(axis=1, keepdims=True)
            diff = act - mu
            sigma = np.sqrt((diff * diff).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = diff / sigma
            h = p[f"g{i}"] * xhat + p[f"beta{i}"]
            if with_cache:
                cache["pre"].append(pre)
                cache["xhat"].append(xhat)
                cache["sigma"].append(sigma)
                cache["h"].append(h)
        q = h @ p["Wh"] + p["bh"]
        if with_cache:
            cache["q"] = q
            return q, cache
        return q

    def boot_forward(self, h_last: np.ndarray) -> np.ndarray:
        """Ensemble scores (n_boot_heads, B, n_actions) from the last hidden layer."""
        return np.stack(
            [h_last @ self.params[f"Wboot{k}"] + self.params[f"bboot{k}"] for k in range(self.n_boot_heads)]
        )

    def q_variance(self, x: np.ndarray, action: int) -> float:
        """Bootstrap-ensemble variance of Q(x, action) for a single state."""
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        _, cache = self.forward(x, with_cache=True)
        h_last = cache["h"][-1]
        qs = self.boot_forward(h_last)[:, 0, action]
        return float(np.var(qs.astype(np.float64)))

    # -- backward -----------------------------------------------------------

    def _backprop(self, cache, dq: np.ndarray, want_input_grad: bool = False):
        p = self.params
        grads: dict[str, np.ndarray] = {}
        grads["Wh"] = cache["h"][-1].T @ dq
        grads["bh"] = dq.sum(axis=0)
        dh = dq @ p["Wh"].T
        for i in reversed(range(len(self.hidden))):
            xhat, sigma, pre = cache["xhat"][i], cache["sigma"][i], cache["pre"][i]
            grads[f"g{i}"] = (dh * xhat).sum(axis=0)
            grads[f"beta{i}"] = dh.sum(axis=0)
            dxhat = dh * p[f"g{i}"]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            dact = (dxhat - m1 - xhat * m2) / sigma
            dpre = dact * (pre > 0)
            h_prev = cache["x"] if i == 0 else cache["h"][i - 1]
            grads[f"W{i}"] = h_prev.T @ dpre
            grads[f"b{i}"] = dpre.sum(axis=0)
            dh = dpre @ p[f"W{i}"].T
        return grads, (dh if want_input_grad else None)

    def td_loss_and_grads(
        self,
        x: np.ndarray,
        actions: np.ndarray,
        targets: np.ndarray,
        is_weights: np.ndarray | None = None,
        boot_masks: np.ndarray | None = None,
    ):
        """Squared TD loss on selected actions; exact gradients for every parameter.

        Returns (loss, grads, td_errors). When ``boot_masks`` with shape
        (n_boot_heads, B) is given, each extra head gets its own masked TD
        loss on the same targets; those gradients stop at the trunk.
        """
        if len(x) == 0:
            raise ParameterError("batch must be non-empty")
        q, cache = self.forward(x, with_cache=True)
        b = q.shape[0]
        rows = np.arange(b)
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=self.dtype)
        w = np.ones(b, dtype=self.dtype) if is_weights is None else np.asarray(is_weights, dtype=self.dtype)
        delta = q[rows, actions] - targets
        loss = float(0.5 * np.mean(w * delta * delta))
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite TD loss (batch size {b}, |delta| max "
                f"{np.abs(delta).max() if len(delta) else 0})"
            )
        dq = np.zeros_like(q)
        dq[rows, actions] = w * delta / b
        grads, _ = self._backprop(cache, dq)
        if boot_masks is not None:
            h_last = cache["h"][-1]
            boot_q = self.boot_forward(h_last)
            for k in range(self.n_boot_heads):
                m = boot_masks[k].astype(self.dtype)
                denom = max(float(m.sum()), 1.0)
                bdelta = (boot_q[k][rows, actions] - targets) * m
                dqk = np.zeros_like(boot_q[k])
                dqk[rows, actions] = bdelta / denom
                grads[f"Wboot{k}"] = h_last.T @ dqk
                grads[f"bboot{k}"] = dqk.sum(axis=0)
        return loss, grads, np.abs(delta.astype(np.float64))

    def input_gradient(self, x: np.ndarray, action: int) -> np.ndarray:
        """d Q(x, action) / d x for a single state vector."""
        q, cache = self.forward(np.atleast_2d(x), with_cache=True)
        dq = np.zeros_like(q)
        dq[0, int(action)] = 1.0
        _, dx = self._backprop(cache, dq, want_input_grad=True)
        return dx[0].astype(np.float64)

    # -- bookkeeping ----------------------------------------------------------

    def copy(self) -> "ValueNet":
        return ValueNet(
            input_dim=self.input_dim,
            hidden=self.hidden,
            n_actions=self.n_actions,
            n_boot_heads=self.n_boot_heads,
            seed=self.seed,
            dtype=self.dtype,
            params={k: v.copy() for k, v in self.params.items()},
        )

    def manifest(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "n_actions": self.n_actions,
            "n_boot_heads": self.n_boot_heads,
            "seed": self.seed,
            "dtype": np.dtype(self.dtype).name,
        }

    @classmethod
    def from_arrays(cls, manifest: dict, arrays: dict[str, np.ndarray]) -> "ValueNet":
        return cls(
            input_dim=int(manifest["input_dim"]),
            hidden=tuple(int(h) for h in manifest["hidden"]),
            n_actions=int(manifest["n_actions"]),
            n_boot_heads=int(manifest["n_boot_heads"]),
            seed=int(manifest["seed"]),
            dtype=np.dtype(manifest["dtype"]).type,
            params={k: np.array(v) for k, v in arrays.items()},
        )


# ---------------------------------------------------------------------------
# Masked policy helpers
# ---------------------------------------------------------------------------

def masked_greedy(q: np.ndarray, mask: np.ndarray) -> int:
    """Argmax over admissible actions; ties broken by lowest action index."""
    if not mask.any():
        raise ParameterError("no admissible action for a non-terminal state")
    scores = np.where(mask, q.astype(np.float64), -np.inf)
    return int(np.argmax(scores))


def masked_softmax(q: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax restricted to admissible actions; inadmissible entries get 0."""
    if not mask.any():
        raise ParameterError("no admissible action for a non-terminal state")
    z = q.astype(np.float64) / temperature
    z = np.where(mask, z, -np.inf)
    z = z - z[mask].max()
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum()


def epsilon_greedy(q: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if epsilon > 0 and rng.random() < epsilon:
        choices = np.flatnonzero(mask)
        return int(choices[rng.integers(len(choices))])
    return masked_greedy(q, mask)


def double_dqn_target(
    r: float,
    q_next_online: np.ndarray,
    q_next_target: np.ndarray,
    next_mask: np.ndarray,
    gamma: float,
    done: bool,
) -> float:
    """y = r + gamma * Q_target(s', argmax_a Q_online(s', a)) over admissible a."""
    if done:
        return float(r)
    a_star = masked_greedy(q_next_online, next_mask)
    return float(r + gamma * float(q_next_target[a_star]))


def polyak_update(target: ValueNet, online: ValueNet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, element-wise."""
    for k, v in online.params.items():
        t = target.params[k]
        if t.shape != v.shape:
            raise ParameterError(f"shape mismatch for {k}: {t.shape} vs {v.shape}")
        t *= 1.0 - tau
        t += tau * v


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global l2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
        return max_norm
    return total


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k], dtype=np.float64)
                self.v[k] = np.zeros_like(params[k], dtype=np.float64)
            g64 = g.astype(np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g64
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g64 * g64
            update = self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)
            params[k] -= update.astype(params[k].dtype)
