"""Self-play training of the Blue/Red value policies.

Both agents share the architecture but train on independent buffers and
rewards. Incidents run in a small vector of parallel environments; every
vector step performs one double-DQN update per trained agent with
prioritized sampling, Polyak target blending and global gradient clipping.
Training stops early once the smoothed episodic return and the validation
false-positive rate have both been stable for 20 consecutive evaluation
intervals, and unconditionally at the step budget.

Red's state view carries Blue's current proposal in the context block; the
stored next-state view zeroes those bits because the counterpart proposal at
t+1 is unknown when the transition is recorded.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..env import IncidentEnv
from ..features import FeatureBuilder
from ..roadmap import ACTION_INDEX, ConstrainedMdp, DISRUPTIVE_STATES
from ..telemetry import Episode, ParameterError
from .net import AdamState, NumericalError, ValueNet, clip_gradients, epsilon_greedy, polyak_update
from .policy import arbitrate, divergence
from .replay import ReplayBuffer

ESCALATE = ACTION_INDEX["escalate_to_human"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    gamma: float = 0.99
    polyak_tau: float = 0.005
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 300_000
    grad_clip: float = 5.0
    total_steps: int = 200_000
    buffer_capacity: int = 500_000
    priority_eps: float = 1e-3
    is_beta_start: float = 0.4
    n_envs: int = 16
    learning_starts: int = 2_000
    train_every: int = 1
    eval_interval: int = 2_000
    early_stop_intervals: int = 20
    return_stability_tol: float = 0.75
    fpr_stability_tol: float = 0.02
    min_steps_before_stop: int = 40_000
    n_boot_heads: int = 5
    boot_mask_prob: float = 0.8
    veto_margin: float = 1.0
    divergence_metric: str = "js_policy"
    tau_div_training: float | None = None  # divergence gate stays out of self-play
    frames_per_step: int = 2
    t_max: int = 32
    hidden: tuple[int, ...] = (256, 256, 128)
    seed: int = 1

    def __post_init__(self) -> None:
        positive = (
            self.learning_rate, self.batch_size, self.gamma, self.polyak_tau,
            self.epsilon_start, self.grad_clip, self.buffer_capacity,
            self.n_envs, self.eval_interval,
        )
        if any(v <= 0 for v in positive):
            raise ParameterError("training configuration values must be positive")
        if self.epsilon_end > self.epsilon_start:
            raise ParameterError("epsilon_end must not exceed epsilon_start")


@dataclass
class TrainResult:
    blue: ValueNet | None
    red: ValueNet | None
    log: list[dict]
    log_hash: str
    stopped_at: int
    divergence_median: float
    mode: str
    config: TrainConfig
    # evenly-spaced replay snapshot (states + executed actions) kept for the
    # ETS coverage term
    experience_states: np.ndarray = None  # type: ignore[assignment]
    experience_actions: np.ndarray = None  # type: ignore[assignment]

    def net_for(self, team: str) -> ValueNet:
        net = self.blue if team == "blue" else self.red
        if net is None:
            raise ParameterError(f"{team} policy was not trained in mode {self.mode!r}")
        return net


@dataclass
class _Agent:
    online: ValueNet
    target: ValueNet
    buffer: ReplayBuffer
    adam: AdamState
    rng: np.random.Generator


class _EpisodeCycler:
    """Deterministic shuffled pass over the training episodes."""

    def __init__(self, episodes: list[Episode], rng: np.random.Generator):
        if not episodes:
            raise ParameterError("no training episodes")
        self.episodes = episodes
        self.rng = rng
        self.order: list[int] = []

    def next(self) -> Episode:
        if not self.order:
            self.order = list(self.rng.permutation(len(self.episodes)))
        return self.episodes[self.order.pop(0)]


def _epsilon(cfg: TrainConfig, env_steps: int) -> float:
    frac = min(1.0, env_steps / max(1, cfg.epsilon_anneal_steps))
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def _batched_double_dqn_targets(agent: _Agent, batch, gamma: float) -> np.ndarray:
    q_online = agent.online.forward(batch["x_next"])
    q_target = agent.target.forward(batch["x_next"])
    mask = batch["next_mask"]
    scores = np.where(mask, q_online.astype(np.float64), -np.inf)
    has_any = mask.any(axis=1)
    a_star = np.zeros(len(scores), dtype=int)
    a_star[has_any] = np.argmax(scores[has_any], axis=1)
    boot = q_target[np.arange(len(scores)), a_star].astype(np.float64)
    boot[~has_any] = 0.0
    return batch["reward"] + gamma * boot * (~batch["done"])


def _update_agent(agent: _Agent, cfg: TrainConfig, boot_rng: np.random.Generator) -> float:
    batch = agent.buffer.sample(cfg.batch_size, agent.rng)
    targets = _batched_double_dqn_targets(agent, batch, cfg.gamma)
    boot_masks = (boot_rng.random((cfg.n_boot_heads, len(targets))) < cfg.boot_mask_prob)
    loss, grads, td = agent.online.td_loss_and_grads(
        batch["x"], batch["action"], targets, batch["is_weights"], boot_masks
    )
    clip_gradients(grads, cfg.grad_clip)
    agent.adam.step(agent.online.params, grads)
    agent.buffer.update_priorities(batch["indices"], td)
    polyak_update(agent.target, agent.online, cfg.polyak_tau)
    return loss


def greedy_council_step(
    env: IncidentEnv,
    blue: ValueNet | None,
    red: ValueNet | None,
    veto_margin: float,
    divergence_metric: str,
    tau_div: float | None = None,
):
    """One greedy deliberation step; returns (arb, aB, aR, qB, qR, D, x_blue, x_red)."""
    mask = env.mask()
    if blue is not None:
        x_blue = env.observe(None)
        q_blue = blue.forward(x_blue)[0]
        a_blue = int(np.argmax(np.where(mask, q_blue.astype(np.float64), -np.inf)))
    else:
        x_blue = q_blue = a_blue = None
    if red is not None:
        x_red = env.observe(a_blue)
        q_red = red.forward(x_red)[0]
        a_red = int(np.argmax(np.where(mask, q_red.astype(np.float64), -np.inf)))
    else:
        x_red = q_red = a_red = None

    if blue is None:
        div = divergence(q_red, q_red, mask, divergence_metric)
        arb = arbitrate(a_red, a_red, mask, q_red, q_red, div, tau_div, veto_margin)
        return arb, a_red, a_red, q_red, q_red, div, x_red, x_red
    if red is None:
        div = divergence(q_blue, q_blue, mask, divergence_metric)
        arb = arbitrate(a_blue, a_blue, mask, q_blue, q_blue, div, tau_div, veto_margin)
        return arb, a_blue, a_blue, q_blue, q_blue, div, x_blue, x_blue
    div = divergence(q_blue, q_red, mask, divergence_metric)
    arb = arbitrate(a_blue, a_red, mask, q_blue, q_red, div, tau_div, veto_margin)
    return arb, a_blue, a_red, q_blue, q_red, div, x_blue, x_red


def _probe_fpr(
    episodes: list[Episode],
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    blue: ValueNet | None,
    red: ValueNet | None,
    cfg: TrainConfig,
) -> float:
    """Ungated greedy-council false-positive probe on benign episodes."""
    benign = [e for e in episodes if e.label == "benign"]
    if not benign:
        return 0.0
    fp = 0
    for ep in benign:
        env = IncidentEnv(mdp, builder, ep, cfg.frames_per_step, cfg.t_max)
        while not env.done:
            arb, _aB, aR, _qB, _qR, _d, _xb, _xr = greedy_council_step(
                env, blue, red, cfg.veto_margin, cfg.divergence_metric
            )
            action = arb.executed
            if action is None or action == ESCALATE:
                break
            env.apply(action, red_proposal=aR, vetoed=arb.vetoed)
        if env.disruption_executed:
            fp += 1
    return fp / len(benign)


def _window_stable(values: deque, tol: float) -> bool:
    return len(values) == values.maxlen and (max(values) - min(values)) <= tol


def train_self_play(
    train_episodes: list[Episode],
    val_episodes: list[Episode],
    mdp: ConstrainedMdp,
    builder: FeatureBuilder,
    config: TrainConfig,
    mode: str = "both",
) -> TrainResult:
    """Train the policy pair (or a single policy for ablation modes).

    mode: "both" trains Blue and Red with arbitration in the loop;
    "blue_only" executes Blue unopposed; "red_only" lets Red act alone.
    Deterministic for a fixed (config, dataset, mode).
    """
    if mode not in ("both", "blue_only", "red_only"):
        raise ParameterError(f"unknown training mode {mode!r}")
    root = np.random.SeedSequence([config.seed, 0x7EA2])
    seeds = root.spawn(6)
    rng_cycle = np.random.default_rng(seeds[0])
    rng_explore = np.random.default_rng(seeds[1])
    rng_boot = np.random.default_rng(seeds[2])

    state_dim = builder.state_dim

    def make_agent(net_seed_tag: int, sample_seed) -> _Agent:
        online = ValueNet(
            input_dim=state_dim,
            hidden=config.hidden,
            seed=config.seed * 1000 + net_seed_tag,
            n_boot_heads=config.n_boot_heads,
        )
        return _Agent(
            online=online,
            target=online.copy(),
            buffer=ReplayBuffer(
                config.buffer_capacity,
                state_dim,
                online.n_actions,
                priority_eps=config.priority_eps,
                beta_start=config.is_beta_start,
                beta_anneal_steps=max(1, config.total_steps // config.n_envs),
            ),
            adam=AdamState(
                lr=config.learning_rate,
                beta1=config.adam_beta1,
                beta2=config.adam_beta2,
                eps=config.adam_eps,
            ),
            rng=np.random.default_rng(sample_seed),
        )

    blue = make_agent(1, seeds[3]) if mode in ("both", "blue_only") else None
    red = make_agent(2, seeds[4]) if mode in ("both", "red_only") else None

    cycler = _EpisodeCycler(train_episodes, rng_cycle)
    envs = [
        IncidentEnv(mdp, builder, cycler.next(), config.frames_per_step, config.t_max)
        for _ in range(config.n_envs)
    ]

    env_steps = 0
    episode_returns: deque[float] = deque(maxlen=64)
    return_ema: float | None = None
    div_window: deque[float] = deque(maxlen=4096)
    div_median = 0.0
    recent_div: list[float] = []
    log: list[dict] = []
    return_history: deque[float] = deque(maxlen=config.early_stop_intervals)
    fpr_history: deque[float] = deque(maxlen=config.early_stop_intervals)
    stopped_at = 0
    next_eval = config.eval_interval
    env_return = [0.0] * config.n_envs

    if config.total_steps > 0:
        while env_steps < config.total_steps:
            eps = _epsilon(config, env_steps)
            masks = [e.mask() for e in envs]

            if blue is not None:
                xb = np.stack([e.observe(None) for e in envs])
                qb_all = blue.online.forward(xb)
                a_blue = [
                    epsilon_greedy(qb_all[i], masks[i], eps, rng_explore)
                    for i in range(len(envs))
                ]
            else:
                xb = qb_all = None
                a_blue = [None] * len(envs)
            if red is not None:
                xr = np.stack([e.observe(a_blue[i]) for i, e in enumerate(envs)])
                qr_all = red.online.forward(xr)
                a_red = [
                    epsilon_greedy(qr_all[i], masks[i], eps, rng_explore)
                    for i in range(len(envs))
                ]
            else:
                xr = qr_all = None
                a_red = [None] * len(envs)

            for i, env in enumerate(envs):
                mask = masks[i]
                if mode == "both":
                    div = divergence(qb_all[i], qr_all[i], mask, config.divergence_metric)
                    arb = arbitrate(
                        a_blue[i], a_red[i], mask, qb_all[i], qr_all[i],
                        div, config.tau_div_training, config.veto_margin,
                    )
                    executed = ESCALATE if arb.escalate else arb.executed
                    vetoed = arb.vetoed
                elif mode == "blue_only":
                    div = None
                    executed, vetoed = a_blue[i], False
                else:
                    div = None
                    executed, vetoed = a_red[i], False

                d_val = div.value if div is not None else 0.0
                div_window.append(d_val)
                recent_div.append(d_val)
                uncertainty_high = d_val > div_median

                if executed == ESCALATE:
                    # explicit hand-off: terminal during self-play (no adjudicator)
                    r_b, r_r = env.escalation_rewards(divergence_exceeded=uncertainty_high)
                    next_mask = np.zeros(len(mask), dtype=bool)
                    if blue is not None:
                        blue.buffer.add(xb[i], executed, r_b, xb[i], next_mask, True, mask)
                    if red is not None:
                        red.buffer.add(xr[i], executed, r_r, xr[i], next_mask, True, mask)
                    env.force_escalated()
                    env_return[i] += r_b
                else:
                    out = env.apply(
                        executed,
                        red_proposal=a_red[i],
                        vetoed=vetoed,
                        uncertainty_high=uncertainty_high,
                    )
                    next_mask = env.mask() if not out.done else np.zeros(len(mask), dtype=bool)
                    if blue is not None:
                        xb_next = env.observe(None)
                        blue.buffer.add(xb[i], executed, out.r_blue, xb_next, next_mask, out.done, mask)
                    if red is not None:
                        xr_next = env.observe(None)  # counterpart proposal unknown at t+1
                        red.buffer.add(xr[i], executed, out.r_red, xr_next, next_mask, out.done, mask)
                    env_return[i] += out.r_blue if blue is not None else out.r_red

                if env.done:
                    episode_returns.append(env_return[i])
                    ema_target = env_return[i]
                    return_ema = (
                        ema_target if return_ema is None else 0.95 * return_ema + 0.05 * ema_target
                    )
                    env_return[i] = 0.0
                    envs[i] = IncidentEnv(
                        mdp, builder, cycler.next(), config.frames_per_step, config.t_max
                    )

            env_steps += config.n_envs
            if len(recent_div) >= 2048:
                div_median = float(np.median(div_window))
                recent_div.clear()

            losses = {"blue": float("nan"), "red": float("nan")}
            if env_steps >= config.learning_starts:
                for _ in range(config.train_every):
                    for name, agent in (("blue", blue), ("red", red)):
                        if agent is None or len(agent.buffer) < config.batch_size:
                            continue
                        try:
                            losses[name] = _update_agent(agent, config, rng_boot)
                        except NumericalError:
                            stopped_at = env_steps
                            raise

            if env_steps >= next_eval:
                next_eval += config.eval_interval
                val_fpr = _probe_fpr(
                    val_episodes[:16], mdp, builder,
                    blue.online if blue else None,
                    red.online if red else None,
                    config,
                )
                entry = {
                    "step": env_steps,
                    "loss_blue": round(losses["blue"], 8) if np.isfinite(losses["blue"]) else None,
                    "loss_red": round(losses["red"], 8) if np.isfinite(losses["red"]) else None,
                    "return_ema": round(return_ema, 6) if return_ema is not None else None,
                    "epsilon": round(eps, 6),
                    "div_mean": round(float(np.mean(div_window)) if div_window else 0.0, 6),
                    "div_p90": round(float(np.quantile(div_window, 0.9)) if div_window else 0.0, 6),
                    "val_fpr": round(val_fpr, 6),
                }
                log.append(entry)
                if return_ema is not None:
                    return_history.append(return_ema)
                fpr_history.append(val_fpr)
                if (
                    env_steps >= config.min_steps_before_stop
                    and _window_stable(return_history, config.return_stability_tol)
                    and _window_stable(fpr_history, config.fpr_stability_tol)
                ):
                    stopped_at = env_steps
                    break
        if stopped_at == 0:
            stopped_at = env_steps

    div_median = float(np.median(div_window)) if div_window else 0.0
    digest = hashlib.sha256(
        json.dumps(log, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    src = blue if blue is not None else red
    n = len(src.buffer)
    if n:
        keep = np.linspace(0, n - 1, min(n, 8192)).astype(int)
        exp_states = src.buffer.x[keep].copy()
        exp_actions = src.buffer.action[keep].astype(int).copy()
    else:
        exp_states = np.zeros((0, state_dim), dtype=np.float32)
        exp_actions = np.zeros(0, dtype=int)
    return TrainResult(
        blue=blue.online if blue else None,
        red=red.online if red else None,
        log=log,
        log_hash=digest,
        stopped_at=stopped_at,
        divergence_median=div_median,
        mode=mode,
        config=config,
        experience_states=exp_states,
        experience_actions=exp_actions,
    )
