"""Synthetic telemetry environment: ground-truth causal model, episodes, splits.

The ground-truth structural causal model (SCM) is linear-Gaussian: every
variable is a weighted sum of its parents plus independent Gaussian noise.
Attack episodes overlay hard (do-style) interventions from a per-template
phase schedule, which gives unambiguous ground truth for scoring both causal
discovery and the decision policies.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

CHANNEL_KINDS = ("host", "net", "control")


class ParameterError(ValueError):
    """Invalid generator or operator parameters."""


@dataclass(frozen=True)
class AttackPhase:
    name: str
    start_frac: float  # inclusive, fraction of horizon
    end_frac: float    # exclusive
    interventions: dict[str, float]  # variable -> forced value (do-style)


@dataclass(frozen=True)
class AttackTemplate:
    name: str
    phases: tuple[AttackPhase, ...]

    def intervened_variables(self) -> set[str]:
        out: set[str] = set()
        for ph in self.phases:
            out.update(ph.interventions)
        return out


@dataclass(frozen=True)
class GroundTruthScm:
    """Linear-Gaussian SCM over an explicit topological variable order."""

    variables: tuple[str, ...]
    parents: dict[str, tuple[str, ...]]
    coefficients: dict[tuple[str, str], float]  # (parent, child) -> weight
    noise_scales: dict[str, float]
    attack_templates: tuple[AttackTemplate, ...] = ()
    channels: dict[str, str] = field(default_factory=dict)  # variable -> kind

    def __post_init__(self) -> None:
        self.topological_order()  # raises on cycles
        for v, s in self.noise_scales.items():
            if s <= 0:
                raise ParameterError(f"noise scale for {v} must be positive, got {s}")
        declared = set(self.variables)
        for tpl in self.attack_templates:
            unknown = tpl.intervened_variables() - declared
            if unknown:
                raise ParameterError(
                    f"attack template {tpl.name!r} references undeclared variables {sorted(unknown)}"
                )

    @property
    def dim(self) -> int:
        return len(self.variables)

    def index(self, var: str) -> int:
        return self.variables.index(var)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; raises ParameterError if the parent relation cycles."""
        indeg = {v: len(self.parents.get(v, ())) for v in self.variables}
        children: dict[str, list[str]] = {v: [] for v in self.variables}
        for child, pars in self.parents.items():
            for p in pars:
                children[p].append(child)
        queue = [v for v in self.variables if indeg[v] == 0]
        order: list[str] = []
        while queue:
            v = queue.pop(0)
            order.append(v)
            for c in children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self.variables):
            raise ParameterError("parent relation contains a cycle")
        return order

    def edges(self) -> list[tuple[str, str]]:
        return sorted(self.coefficients)

    def covariance(self) -> np.ndarray:
        """Exact stationary covariance: Sigma = (I-W)^-1 D (I-W)^-T.

        W[i, j] = weight of edge variables[j] -> variables[i].
        """
        d = self.dim
        w = np.zeros((d, d))
        for (p, c), coef in self.coefficients.items():
            w[self.index(c), self.index(p)] = coef
        dmat = np.diag([self.noise_scales[v] ** 2 for v in self.variables])
        inv = np.linalg.inv(np.eye(d) - w)
        return inv @ dmat @ inv.T

    def marginal_std(self) -> dict[str, float]:
        sig = self.covariance()
        return {v: math.sqrt(sig[i, i]) for i, v in enumerate(self.variables)}

    def sample_frames(
        self,
        n: int,
        rng: np.random.Generator,
        interventions: dict[str, float] | None = None,
    ) -> np.ndarray:
        """Sample n frames by evaluating structural equations in topological order.

        ``interventions`` forces variables to fixed values before their
        children are evaluated (hard do-operator semantics).
        """
        order = self.topological_order()
        idx = {v: i for i, v in enumerate(self.variables)}
        out = np.zeros((n, self.dim))
        noise = rng.standard_normal((n, self.dim))
        for v in order:
            j = idx[v]
            if interventions and v in interventions:
                out[:, j] = interventions[v]
                continue
            acc = noise[:, j] * self.noise_scales[v]
            for p in self.parents.get(v, ()):
                acc = acc + self.coefficients[(p, v)] * out[:, idx[p]]
            out[:, j] = acc
        return out


@dataclass(frozen=True)
class TelemetryFrame:
    t: int
    values: np.ndarray  # shape (d,)
    channel_ids: tuple[str, ...]  # per-index channel kind

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ParameterError("frame time index must be non-negative")
        if len(self.values) != len(self.channel_ids):
            raise ParameterError("values length must match channel ids")


@dataclass
class Episode:
    episode_id: str
    label: str  # "benign" | "attack"
    values: np.ndarray  # shape (horizon, d)
    channel_ids: tuple[str, ...]
    attack_phase_marks: dict[int, str] = field(default_factory=dict)
    scenario_family: str = ""
    template_name: str | None = None

    def __post_init__(self) -> None:
        if self.label not in ("benign", "attack"):
            raise ParameterError(f"unknown label {self.label!r}")
        if (self.label == "benign") != (not self.attack_phase_marks):
            raise ParameterError("attack_phase_marks must be empty iff label is benign")

    @property
    def horizon(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def frame(self, t: int) -> TelemetryFrame:
        if not 0 <= t < self.horizon:
            raise IndexError(f"frame index {t} outside episode horizon {self.horizon}")
        return TelemetryFrame(t=t, values=self.values[t], channel_ids=self.channel_ids)

    def frames(self) -> list[TelemetryFrame]:
        return [self.frame(t) for t in range(self.horizon)]


@dataclass
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    norm_mean: np.ndarray  # per-variable, fit on train frames only
    norm_scale: np.ndarray

    def membership(self) -> dict[str, str]:
        out = {}
        for name in ("train", "validation", "test"):
            for eid in getattr(self, name):
                out[eid] = name
        return out


def _assign_weights(
    variables: tuple[str, ...],
    parents: dict[str, tuple[str, ...]],
    rng: np.random.Generator,
    signal_lo: float = 0.4,
    signal_hi: float = 0.7,
) -> tuple[dict[tuple[str, str], float], dict[str, float]]:
    """Variance-normalized positive edge weights.

    Every variable gets unit marginal variance with a random signal share in
    [signal_lo, signal_hi]. Two properties matter downstream: positive
    weights keep the family faithful (no path cancellation), and unit
    variances keep partial correlations well-conditioned instead of letting
    deep layers become near-deterministic.
    """
    idx = {v: i for i, v in enumerate(variables)}
    d = len(variables)
    cov = np.zeros((d, d))
    coefficients: dict[tuple[str, str], float] = {}
    noise_scales: dict[str, float] = {}
    for v in variables:  # index order is topological by construction
        j = idx[v]
        pars = parents.get(v, ())
        if not pars:
            noise_scales[v] = 1.0
            cov[j, j] = 1.0
            continue
        p_idx = [idx[p] for p in pars]
        raw = rng.uniform(0.5, 1.5, size=len(pars))
        sig_share = float(rng.uniform(signal_lo, signal_hi))
        sub = cov[np.ix_(p_idx, p_idx)]
        raw_var = float(raw @ sub @ raw)
        w = raw * math.sqrt(sig_share / raw_var)
        for p, wi in zip(pars, w):
            coefficients[(p, v)] = float(wi)
        noise_scales[v] = math.sqrt(1.0 - sig_share)
        cov[j, :j] = w @ cov[np.ix_(p_idx, range(j))]
        cov[:j, j] = cov[j, :j]
        cov[j, j] = 1.0
    return coefficients, noise_scales


def generate_scm(
    num_vars: int,
    edge_density: float,
    num_attack_templates: int,
    seed: int,
    channels: dict[str, str] | None = None,
) -> GroundTruthScm:
    """Random acyclic linear-Gaussian SCM with the variable index as topological order.

    Edge (v_i -> v_j) for i < j is included independently with probability
    ``edge_density``; weights come from the variance-normalized positive
    scheme (see _assign_weights).
    """
    if num_vars < 2:
        raise ParameterError(f"num_vars must be >= 2, got {num_vars}")
    if not 0.0 <= edge_density <= 1.0:
        raise ParameterError(f"edge_density must be in [0, 1], got {edge_density}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C31]))
    width = max(2, len(str(num_vars - 1)))
    variables = tuple(f"v{i:0{width}d}" for i in range(num_vars))
    parents: dict[str, tuple[str, ...]] = {v: () for v in variables}
    for j in range(num_vars):
        pars = [variables[i] for i in range(j) if rng.random() < edge_density]
        parents[variables[j]] = tuple(pars)
    coefficients, noise_scales = _assign_weights(variables, parents, rng)
    scm = GroundTruthScm(
        variables=variables,
        parents=parents,
        coefficients=coefficients,
        noise_scales=noise_scales,
        channels=channels or {v: "host" for v in variables},
    )
    templates = _make_templates(scm, num_attack_templates, rng)
    return dataclasses.replace(scm, attack_templates=templates)


def _make_templates(
    scm: GroundTruthScm,
    count: int,
    rng: np.random.Generator,
    candidate_vars: tuple[str, ...] | None = None,
) -> tuple[AttackTemplate, ...]:
    """Hard-intervention recipes with a three-phase schedule of growing footprint."""
    if count == 0:
        return ()
    stds = scm.marginal_std()
    pool = list(candidate_vars if candidate_vars is not None else scm.variables)
    templates = []
    phase_plan = (("recon", 0.0, 0.35, 1), ("escalation", 0.35, 0.7, 2), ("impact", 0.7, 1.0, 3))
    for k in range(count):
        phases = []
        touched: list[str] = []
        for name, lo, hi, nvars in phase_plan:
            fresh = [v for v in pool if v not in touched]
            take = min(nvars, len(fresh))
            chosen = list(rng.choice(fresh, size=take, replace=False)) if take else []
            touched.extend(chosen)
            forced = {}
            for v in touched:
                sign = 1.0 if rng.random() < 0.5 else -1.0
                forced[v] = float(sign * rng.uniform(3.0, 5.0) * stds[v])
            phases.append(AttackPhase(name=name, start_frac=lo, end_frac=hi, interventions=forced))
        templates.append(AttackTemplate(name=f"tpl{k:02d}", phases=tuple(phases)))
    return tuple(templates)


def sample_episode(
    scm: GroundTruthScm,
    horizon: int,
    label: str,
    template_id: int | None,
    seed: int,
    episode_id: str = "",
) -> Episode:
    """Sample one telemetry episode; frames are iid given the (intervened) SCM."""
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if (label == "attack") != (template_id is not None):
        raise ParameterError("template_id must be present iff label == attack")
    if label == "attack" and not 0 <= template_id < len(scm.attack_templates):
        raise ParameterError(f"unknown attack template id {template_id}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE915]))
    channel_ids = tuple(scm.channels.get(v, "host") for v in scm.variables)
    marks: dict[int, str] = {}
    if label == "benign":
        values = scm.sample_frames(horizon, rng)
    else:
        tpl = scm.attack_templates[template_id]
        values = np.zeros((horizon, scm.dim))
        for t in range(horizon):
            frac = t / horizon
            active = None
            for ph in tpl.phases:
                if ph.start_frac <= frac < ph.end_frac:
                    active = ph
                    break
            if active is None and tpl.phases and frac >= tpl.phases[-1].end_frac - 1e-12:
                active = tpl.phases[-1]
            interv = active.interventions if active else None
            values[t] = scm.sample_frames(1, rng, interventions=interv)[0]
            if active is not None and interv:
                marks[t] = active.name
        if not marks:
            raise ParameterError(f"attack template {tpl.name!r} produced no intervened frames")
    ep_id = episode_id or f"{label}-{template_id if template_id is not None else 'x'}-{seed}"
    return Episode(
        episode_id=ep_id,
        label=label,
        values=values,
        channel_ids=channel_ids,
        attack_phase_marks=marks,
        scenario_family=f"{label}:{template_id if template_id is not None else 'base'}",
        template_name=scm.attack_templates[template_id].name if label == "attack" else None,
    )


def split_dataset(
    episodes: list[Episode],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Scenario-family-disjoint split; normalization stats fit on train frames only."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ParameterError("split ratios must be non-negative")
    families: dict[str, list[str]] = {}
    by_id = {}
    for ep in episodes:
        families.setdefault(ep.scenario_family, []).append(ep.episode_id)
        by_id[ep.episode_id] = ep
    needed = sum(1 for r in ratios if r > 0)
    if len(families) < needed:
        raise ParameterError(
            f"only {len(families)} scenario families for {needed} non-empty splits"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x59117]))
    # stratify the family allocation by label so every non-empty split sees
    # both benign and attack scenarios
    label_of = {ep.episode_id: ep.label for ep in episodes}
    strata: dict[str, list[str]] = {}
    for fam, members in families.items():
        lab = label_of[members[0]]
        strata.setdefault(lab, []).append(fam)
    buckets: list[list[str]] = [[], [], []]
    for lab in sorted(strata):
        fam_names = sorted(strata[lab])
        rng.shuffle(fam_names)
        total = sum(len(families[f]) for f in fam_names)
        counts = [0, 0, 0]
        for fam in fam_names:
            deficits = [
                ratios[k] * total - counts[k] if ratios[k] > 0 else -math.inf
                for k in range(3)
            ]
            k = int(np.argmax(deficits))
            buckets[k].extend(families[fam])
            counts[k] += len(families[fam])
    # empty-ratio splits must stay empty; everything else already honored
    train_ids = tuple(sorted(buckets[0]))
    if not train_ids:
        raise ParameterError("train split is empty; increase the train ratio")
    # baseline normalization: fit on benign train frames so attack-time
    # deviations keep their scale (attack frames would inflate the spread of
    # frequently-manipulated variables); falls back to all train frames for
    # attack-only corpora
    base_ids = [eid for eid in train_ids if by_id[eid].label == "benign"] or list(train_ids)
    frames = np.concatenate([by_id[eid].values for eid in base_ids], axis=0)
    mean = frames.mean(axis=0)
    scale = frames.std(axis=0)
    scale = np.where(scale < 1e-8, 1.0, scale)
    return DatasetSplit(
        train=train_ids,
        validation=tuple(sorted(buckets[1])),
        test=tuple(sorted(buckets[2])),
        norm_mean=mean,
        norm_scale=scale,
    )


# ---------------------------------------------------------------------------
# Default synthetic environment
# ---------------------------------------------------------------------------

#: Layered channel plan for the default environment. Edges only run from
#: earlier layers to later ones, so each investigation stage's required
#: variables are parent-covered by the stages before it.
DEFAULT_LAYERS: tuple[tuple[str, str, int], ...] = (
    ("alert", "host", 2),
    ("host_activity", "host", 8),
    ("net_activity", "net", 8),
    ("correlation", "control", 4),
    ("impact", "control", 2),
)


def build_default_scm(seed: int, num_attack_templates: int = 24) -> GroundTruthScm:
    """Structured SCM whose layers mirror the investigation ontology stages.

    Every non-root variable has at least one parent in an earlier layer and
    no parents inside its own layer, which keeps roadmap compilation exact.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEFA]))
    variables: list[str] = []
    channels: dict[str, str] = {}
    layer_members: list[list[str]] = []
    i = 0
    for _name, kind, size in DEFAULT_LAYERS:
        members = []
        for _ in range(size):
            v = f"v{i:02d}"
            variables.append(v)
            channels[v] = kind
            members.append(v)
            i += 1
        layer_members.append(members)
    parents: dict[str, tuple[str, ...]] = {v: () for v in variables}
    prior: list[str] = []
    for li, members in enumerate(layer_members):
        if li == 0:
            prior.extend(members)
            continue
        for v in members:
            k = int(rng.integers(1, min(3, len(prior)) + 1))
            pars = sorted(rng.choice(prior, size=k, replace=False))
            parents[v] = tuple(pars)
        prior.extend(members)
    coefficients, noise_scales = _assign_weights(tuple(variables), parents, rng)
    scm = GroundTruthScm(
        variables=tuple(variables),
        parents=parents,
        coefficients=coefficients,
        noise_scales=noise_scales,
        channels=channels,
    )
    # attacks intervene on observable activity, not the raw alert indicators
    candidates = tuple(v for v in variables if channels[v] in ("host", "net") and v not in layer_members[0])
    templates = _make_templates(scm, num_attack_templates, rng, candidate_vars=candidates)
    return dataclasses.replace(scm, attack_templates=templates)


def build_dataset(
    scm: GroundTruthScm,
    num_episodes: int,
    horizon: int,
    attack_fraction: float,
    seed: int,
    burst_family_fraction: float = 0.5,
    burst_noise_factor: float = 2.5,
) -> list[Episode]:
    """Labeled episode corpus with leakage-safe scenario families.

    Benign families split into quiet baseline traffic and noisy-burst
    families (a random variable subset gets inflated exogenous noise): the
    bursts are causally benign but superficially anomalous, which is what
    makes premature containment a real failure mode.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    n_attack = int(round(num_episodes * attack_fraction))
    n_benign = num_episodes - n_attack
    episodes: list[Episode] = []
    n_templates = len(scm.attack_templates)
    if n_attack and not n_templates:
        raise ParameterError("attack episodes requested but SCM has no attack templates")

    n_burst_families = max(1, int(round(4 * burst_family_fraction / (1 - burst_family_fraction)))) if n_benign else 0
    burst_scms = []
    for b in range(n_burst_families):
        scaled = dict(scm.noise_scales)
        subset = rng.choice(scm.variables, size=min(4, scm.dim), replace=False)
        for v in subset:
            scaled[v] = scaled[v] * burst_noise_factor
        burst_scms.append(dataclasses.replace(scm, noise_scales=scaled))

    for k in range(n_benign):
        fam_kind = k % (4 + n_burst_families)
        if fam_kind < 4:
            src, family = scm, f"benign:quiet{fam_kind}"
        else:
            src, family = burst_scms[fam_kind - 4], f"benign:burst{fam_kind - 4}"
        ep = sample_episode(src, horizon, "benign", None, int(rng.integers(2**31)), episode_id=f"ep{len(episodes):04d}")
        ep.scenario_family = family
        episodes.append(ep)
    for k in range(n_attack):
        tpl = k % n_templates
        ep = sample_episode(scm, horizon, "attack", tpl, int(rng.integers(2**31)), episode_id=f"ep{len(episodes):04d}")
        ep.scenario_family = f"attack:{tpl}"
        episodes.append(ep)
    return episodes


# ---------------------------------------------------------------------------
# Persistence (line-delimited episode records, SCM adjacency document)
# ---------------------------------------------------------------------------

def episodes_to_jsonl(episodes: list[Episode]) -> str:
    lines = []
    for ep in episodes:
        for t in range(ep.horizon):
            rec = {
                "episode_id": ep.episode_id,
                "t": t,
                "label": ep.label,
                "family": ep.scenario_family,
                "phase": ep.attack_phase_marks.get(t),
                "channels": list(ep.channel_ids) if t == 0 else None,
                "values": [float(x) for x in ep.values[t]],
            }
            lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def episodes_from_jsonl(text: str) -> list[Episode]:
    rows: dict[str, list[dict]] = {}
    order: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        eid = rec["episode_id"]
        if eid not in rows:
            rows[eid] = []
            order.append(eid)
        rows[eid].append(rec)
    episodes = []
    for eid in order:
        recs = sorted(rows[eid], key=lambda r: r["t"])
        values = np.array([r["values"] for r in recs])
        marks = {r["t"]: r["phase"] for r in recs if r.get("phase")}
        episodes.append(
            Episode(
                episode_id=eid,
                label=recs[0]["label"],
                values=values,
                channel_ids=tuple(recs[0]["channels"]),
                attack_phase_marks=marks,
                scenario_family=recs[0]["family"],
            )
        )
    return episodes


def scm_to_dict(scm: GroundTruthScm) -> dict:
    return {
        "variables": list(scm.variables),
        "channels": dict(scm.channels),
        "edges": [
            {"parent": p, "child": c, "weight": w}
            for (p, c), w in sorted(scm.coefficients.items())
        ],
        "noise_scales": dict(scm.noise_scales),
        "attack_templates": [
            {
                "name": tpl.name,
                "phases": [
                    {
                        "name": ph.name,
                        "start_frac": ph.start_frac,
                        "end_frac": ph.end_frac,
                        "interventions": ph.interventions,
                    }
                    for ph in tpl.phases
                ],
            }
            for tpl in scm.attack_templates
        ],
    }


def scm_from_dict(doc: dict) -> GroundTruthScm:
    variables = tuple(doc["variables"])
    parents: dict[str, tuple[str, ...]] = {v: () for v in variables}
    coefficients = {}
    tmp: dict[str, list[str]] = {v: [] for v in variables}
    for e in doc["edges"]:
        tmp[e["child"]].append(e["parent"])
        coefficients[(e["parent"], e["child"])] = float(e["weight"])
    for v, pars in tmp.items():
        parents[v] = tuple(sorted(pars))
    templates = tuple(
        AttackTemplate(
            name=t["name"],
            phases=tuple(
                AttackPhase(
                    name=p["name"],
                    start_frac=p["start_frac"],
                    end_frac=p["end_frac"],
                    interventions={k: float(x) for k, x in p["interventions"].items()},
                )
                for p in t["phases"]
            ),
        )
        for t in doc["attack_templates"]
    )
    return GroundTruthScm(
        variables=variables,
        parents=parents,
        coefficients=coefficients,
        noise_scales={k: float(v) for k, v in doc["noise_scales"].items()},
        attack_templates=templates,
        channels=dict(doc["channels"]),
    )
