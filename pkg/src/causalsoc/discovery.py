"""Constraint-based causal structure learning over telemetry frames.

Pipeline: stable skeleton search with Fisher-z partial-correlation tests of
growing conditioning size, collider orientation from recorded separating
sets, Meek propagation to the maximally oriented pattern, and a lexicographic
consistent extension to a full DAG. Edge confidences come from a row
bootstrap because the point estimate alone says nothing about stability.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .telemetry import ParameterError


class DegenerateDataError(ValueError):
    """Conditioning covariance is singular; the test is undefined."""


class ConstraintConflictError(ValueError):
    """Background knowledge contradicts a data-forced collider."""


class InternalInvariantError(RuntimeError):
    """Orientation machinery produced a cyclic graph."""


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    independent: bool
    conditioning_set: frozenset[str]


@dataclass
class PartiallyDirectedGraph:
    nodes: tuple[str, ...]
    undirected_edges: set[frozenset[str]] = field(default_factory=set)
    directed_edges: set[tuple[str, str]] = field(default_factory=set)

    def __post_init__(self) -> None:
        for e in self.directed_edges:
            if frozenset(e) in self.undirected_edges:
                raise ParameterError(f"edge {e} is both directed and undirected")
            if e[0] == e[1]:
                raise ParameterError(f"self loop {e}")

    def adjacent(self, a: str, b: str) -> bool:
        return (
            frozenset((a, b)) in self.undirected_edges
            or (a, b) in self.directed_edges
            or (b, a) in self.directed_edges
        )

    def neighbors(self, a: str) -> set[str]:
        out = set()
        for e in self.undirected_edges:
            if a in e:
                out.update(e - {a})
        for u, v in self.directed_edges:
            if u == a:
                out.add(v)
            elif v == a:
                out.add(u)
        return out

    def copy(self) -> "PartiallyDirectedGraph":
        return PartiallyDirectedGraph(
            self.nodes, set(self.undirected_edges), set(self.directed_edges)
        )


SepSetTable = dict[frozenset[str], frozenset[str]]


@dataclass
class CausalDag:
    nodes: tuple[str, ...]
    directed_edges: set[tuple[str, str]]
    edge_confidence: dict[tuple[str, str], float]  # skeleton presence, either orientation
    pattern: PartiallyDirectedGraph | None = None  # Meek-closed PDAG before tie-break
    # fraction of bootstrap resamples supporting this exact orientation;
    # defaults to the skeleton confidence when no bootstrap ran
    directed_confidence: dict[tuple[str, str], float] = field(default_factory=dict)

    def orientation_confidence(self, edge: tuple[str, str]) -> float:
        if edge in self.directed_confidence:
            return self.directed_confidence[edge]
        return self.edge_confidence.get(edge, 0.0)

    def __post_init__(self) -> None:
        self.topological_order()
        for e in self.directed_edges:
            if e not in self.edge_confidence:
                raise ParameterError(f"edge {e} has no confidence value")

    def parents(self, v: str) -> tuple[str, ...]:
        return tuple(sorted(p for p, c in self.directed_edges if c == v))

    def topological_order(self) -> list[str]:
        indeg = {v: 0 for v in self.nodes}
        for _, c in self.directed_edges:
            indeg[c] += 1
        queue = sorted(v for v in self.nodes if indeg[v] == 0)
        order = []
        while queue:
            v = queue.pop(0)
            order.append(v)
            for u, c in sorted(self.directed_edges):
                if u == v:
                    indeg[c] -= 1
                    if indeg[c] == 0:
                        queue.append(c)
        if len(order) != len(self.nodes):
            raise InternalInvariantError("directed edges contain a cycle")
        return order


@dataclass(frozen=True)
class BackgroundKnowledge:
    required_edges: frozenset[tuple[str, str]] = frozenset()
    forbidden_pairs: frozenset[frozenset[str]] = frozenset()
    # directed constraints: (u, v) present means the orientation u -> v is
    # not allowed (the adjacency itself may survive, pointing v -> u)
    forbidden_orientations: frozenset[tuple[str, str]] = frozenset()

    def allows(self, u: str, v: str) -> bool:
        return (u, v) not in self.forbidden_orientations


def channel_tier_knowledge(channels: dict[str, str]) -> BackgroundKnowledge:
    """Domain priors from telemetry channel tiers: host precedes net precedes control.

    Encoded as forbidden orientations against the tier order; within-tier
    orientation is left entirely to the data.
    """
    tier = {"host": 0, "net": 1, "control": 2}
    forbidden = set()
    for u, ku in channels.items():
        for v, kv in channels.items():
            if u != v and tier.get(ku, 0) > tier.get(kv, 0):
                forbidden.add((u, v))
    return BackgroundKnowledge(forbidden_orientations=frozenset(forbidden))


# ---------------------------------------------------------------------------
# Conditional independence testing
# ---------------------------------------------------------------------------

def _partial_correlation(corr: np.ndarray, ix: int, iy: int, iz: list[int]) -> float:
    idx = [ix, iy] + iz
    sub = corr[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDataError("singular conditioning covariance") from exc
    denom = prec[0, 0] * prec[1, 1]
    if denom <= 0:
        raise DegenerateDataError("non-positive precision diagonal")
    return float(-prec[0, 1] / math.sqrt(denom))


def _fisher_z(corr: np.ndarray, n: int, ix: int, iy: int, iz: list[int], alpha: float):
    r = _partial_correlation(corr, ix, iy, iz)
    r = min(max(r, -1 + 1e-12), 1 - 1e-12)
    z = 0.5 * math.log((1 + r) / (1 - r)) * math.sqrt(n - len(iz) - 3)
    p = 2.0 * float(stats.norm.sf(abs(z)))
    return z, p, p > alpha


def ci_test_fisher_z(
    data: np.ndarray,
    x: str,
    y: str,
    z: frozenset[str] | set[str] | tuple[str, ...],
    alpha: float,
    names: tuple[str, ...],
) -> CiTestResult:
    """Two-sided Fisher-z test of partial correlation; exact for linear-Gaussian data."""
    if not 0.01 <= alpha <= 0.05:
        raise ParameterError(f"alpha must be in [0.01, 0.05], got {alpha}")
    zs = sorted(z)
    n = data.shape[0]
    if n <= len(zs) + 3:
        raise ParameterError(f"need n > |Z| + 3, got n={n}, |Z|={len(zs)}")
    corr = np.corrcoef(data, rowvar=False)
    pos = {v: i for i, v in enumerate(names)}
    stat, p, indep = _fisher_z(corr, n, pos[x], pos[y], [pos[v] for v in zs], alpha)
    return CiTestResult(
        statistic=stat, p_value=p, independent=indep, conditioning_set=frozenset(zs)
    )


class _CachedTester:
    """Correlation matrix computed once per dataset; tests reuse submatrix inverses."""

    def __init__(self, data: np.ndarray, names: tuple[str, ...], alpha: float):
        self.n = data.shape[0]
        self.names = names
        self.pos = {v: i for i, v in enumerate(names)}
        self.corr = np.corrcoef(data, rowvar=False)
        self.alpha = alpha

    def independent(self, x: str, y: str, z: tuple[str, ...]) -> bool:
        if self.n <= len(z) + 3:
            raise ParameterError(f"need n > |Z| + 3, got n={self.n}, |Z|={len(z)}")
        _, _, indep = _fisher_z(
            self.corr, self.n, self.pos[x], self.pos[y], [self.pos[v] for v in z], self.alpha
        )
        return indep


# ---------------------------------------------------------------------------
# Skeleton search (stable variant: adjacency snapshot per level)
# ---------------------------------------------------------------------------

def pc_skeleton(
    data: np.ndarray,
    alpha: float,
    l_max: int,
    names: tuple[str, ...] | None = None,
    knowledge: BackgroundKnowledge | None = None,
    tester=None,
) -> tuple[PartiallyDirectedGraph, SepSetTable]:
    """Remove an edge iff some conditioning set of size <= l_max separates it.

    Pairs and subsets are visited in lexicographic order and adjacency sets
    are snapshotted per level, so the result does not depend on within-level
    removal order.
    """
    if l_max < 0:
        raise ParameterError("l_max must be >= 0")
    if names is None:
        names = tuple(f"x{i}" for i in range(data.shape[1]))
    tester = tester or _CachedTester(data, names, alpha)
    knowledge = knowledge or BackgroundKnowledge()
    protected = {frozenset(e) for e in knowledge.required_edges}

    adj: dict[str, set[str]] = {v: set() for v in names}
    for a, b in itertools.combinations(names, 2):
        if frozenset((a, b)) in knowledge.forbidden_pairs:
            continue
        adj[a].add(b)
        adj[b].add(a)
    sepsets: SepSetTable = {}

    level = 0
    while level <= l_max:
        snapshot = {v: frozenset(adj[v]) for v in names}
        any_candidate = False
        for a, b in itertools.combinations(names, 2):
            if b not in adj[a]:
                continue
            if frozenset((a, b)) in protected:
                continue
            removed = False
            for first, second in ((a, b), (b, a)):
                pool = sorted(snapshot[first] - {second})
                if len(pool) < level:
                    continue
                any_candidate = True
                for zset in itertools.combinations(pool, level):
                    if tester.independent(first, second, zset):
                        adj[a].discard(b)
                        adj[b].discard(a)
                        sepsets[frozenset((a, b))] = frozenset(zset)
                        removed = True
                        break
                if removed:
                    break
        if not any_candidate:
            break
        level += 1

    und = {frozenset((a, b)) for a in names for b in adj[a] if a < b}
    return PartiallyDirectedGraph(nodes=names, undirected_edges=und), sepsets


# ---------------------------------------------------------------------------
# Orientation
# ---------------------------------------------------------------------------

def _collider_by_majority(
    skeleton: PartiallyDirectedGraph,
    x: str,
    z: str,
    y: str,
    tester: "_CachedTester",
    l_max: int,
) -> bool | None:
    """Majority vote over all separating subsets: collider iff most exclude z.

    Returns None when no subset separates x and y at all (leave the triple
    to the recorded-sepset rule).
    """
    seen: set[frozenset[str]] = set()
    separating = []
    for first, second in ((x, y), (y, x)):
        pool = sorted(skeleton.neighbors(first) - {second})
        for size in range(0, min(l_max, len(pool)) + 1):
            for sub in itertools.combinations(pool, size):
                key = frozenset(sub)
                if key in seen:
                    continue
                seen.add(key)
                if tester.independent(first, second, sub):
                    separating.append(key)
    if not separating:
        return None
    with_z = sum(1 for s in separating if z in s)
    return with_z < 0.5 * len(separating)


def orient_v_structures(
    skeleton: PartiallyDirectedGraph,
    sepsets: SepSetTable,
    knowledge: BackgroundKnowledge | None = None,
    majority_ctx: tuple["_CachedTester", int] | None = None,
) -> PartiallyDirectedGraph:
    """Collider orientation by votes; disagreeing triples leave the edge undirected.

    With ``majority_ctx`` (tester, l_max) the collider decision re-tests all
    separating subsets and requires a majority excluding z, which is far
    more robust to proxy-shielded sepsets than the single recorded set.
    """
    knowledge = knowledge or BackgroundKnowledge()
    votes: set[tuple[str, str]] = set()
    collider_of: dict[tuple[str, str], tuple[str, str, str]] = {}
    nodes = skeleton.nodes
    for z in nodes:
        nbrs = sorted(skeleton.neighbors(z))
        for x, y in itertools.combinations(nbrs, 2):
            if skeleton.adjacent(x, y):
                continue
            if majority_ctx is not None:
                is_collider = _collider_by_majority(skeleton, x, z, y, *majority_ctx)
            else:
                is_collider = None
            if is_collider is None:
                sep = sepsets.get(frozenset((x, y)))
                is_collider = sep is None or z not in sep
            if is_collider:
                if not (knowledge.allows(x, z) and knowledge.allows(y, z)):
                    continue  # collider contradicts a domain prior: stay undirected
                votes.add((x, z))
                votes.add((y, z))
                collider_of[(x, z)] = (x, z, y)
                collider_of[(y, z)] = (y, z, x)
    for u, v in knowledge.required_edges:
        if (v, u) in votes and (u, v) not in votes:
            raise ConstraintConflictError(
                f"required edge {u}->{v} contradicts collider triple {collider_of[(v, u)]}"
            )

    out = skeleton.copy()
    for u, v in sorted(votes):
        if (v, u) in votes:
            continue  # conflicting double orientation: keep undirected
        pair = frozenset((u, v))
        if pair in out.undirected_edges:
            out.undirected_edges.discard(pair)
            out.directed_edges.add((u, v))
    for u, v in sorted(knowledge.required_edges):
        pair = frozenset((u, v))
        if pair in out.undirected_edges:
            out.undirected_edges.discard(pair)
            out.directed_edges.add((u, v))
    return out


def _creates_directed_cycle(directed: set[tuple[str, str]], u: str, v: str) -> bool:
    """Would adding u->v close a directed path v ~> u?"""
    stack, seen = [v], set()
    while stack:
        w = stack.pop()
        if w == u:
            return True
        if w in seen:
            continue
        seen.add(w)
        stack.extend(c for p, c in directed if p == w)
    return False


def _meek_closure(
    g: PartiallyDirectedGraph, knowledge: BackgroundKnowledge | None = None
) -> PartiallyDirectedGraph:
    """Meek rules R1-R4 applied to fixpoint, honoring forbidden orientations."""
    g = g.copy()
    knowledge = knowledge or BackgroundKnowledge()

    def orient(u: str, v: str) -> bool:
        pair = frozenset((u, v))
        if pair not in g.undirected_edges:
            return False
        if not knowledge.allows(u, v):
            return False
        if _creates_directed_cycle(g.directed_edges, u, v):
            return False
        g.undirected_edges.discard(pair)
        g.directed_edges.add((u, v))
        return True

    # apply directional priors before propagation: an adjacency whose one
    # direction is forbidden is already decided
    for e in sorted(tuple(sorted(p)) for p in set(g.undirected_edges)):
        u, v = e
        if not knowledge.allows(u, v) and knowledge.allows(v, u):
            orient(v, u)
        elif not knowledge.allows(v, u) and knowledge.allows(u, v):
            orient(u, v)

    changed = True
    while changed:
        changed = False
        directed = sorted(g.directed_edges)
        undirected = sorted(tuple(sorted(e)) for e in g.undirected_edges)
        # R1: a -> b, b - c, a and c non-adjacent  =>  b -> c
        for a, b in directed:
            for c in sorted(g.neighbors(b)):
                if c != a and frozenset((b, c)) in g.undirected_edges and not g.adjacent(a, c):
                    changed |= orient(b, c)
        # R2: a -> b -> c with a - c  =>  a -> c
        for a, b in sorted(g.directed_edges):
            for b2, c in sorted(g.directed_edges):
                if b2 == b and frozenset((a, c)) in g.undirected_edges:
                    changed |= orient(a, c)
        # R3: a - b with a - c -> b and a - d -> b, c and d non-adjacent  =>  a -> b
        for a, b in undirected:
            for x, y in ((a, b), (b, a)):
                if frozenset((x, y)) not in g.undirected_edges:
                    continue
                into_y = [p for p, c in g.directed_edges if c == y]
                cands = [
                    p for p in into_y if frozenset((x, p)) in g.undirected_edges
                ]
                for c1, c2 in itertools.combinations(sorted(cands), 2):
                    if not g.adjacent(c1, c2):
                        changed |= orient(x, y)
                        break
        # R4: a - b with d -> c -> b, a adjacent to d, b and d non-adjacent  =>  a -> b
        for a, b in undirected:
            for x, y in ((a, b), (b, a)):
                if frozenset((x, y)) not in g.undirected_edges:
                    continue
                for d, c in sorted(g.directed_edges):
                    if (c, y) in g.directed_edges and g.adjacent(x, d) and not g.adjacent(y, d):
                        changed |= orient(x, y)
                        break
    return g


def apply_meek_rules(
    pdag: PartiallyDirectedGraph, knowledge: BackgroundKnowledge | None = None
) -> CausalDag:
    """Meek closure, then a lexicographic consistent extension to a full DAG.

    Residual undirected edges are oriented smallest-pair-first; an
    orientation is skipped when forbidden, flipped when it would close a
    cycle or create a new unshielded collider, and the closure is re-run
    after each commitment.
    """
    knowledge = knowledge or BackgroundKnowledge()
    g = _meek_closure(pdag, knowledge)

    def new_collider(gg: PartiallyDirectedGraph, u: str, v: str) -> bool:
        for p, c in gg.directed_edges:
            if c == v and p != u and not gg.adjacent(p, u):
                return True
        return False

    while g.undirected_edges:
        u, v = sorted(tuple(sorted(e)) for e in g.undirected_edges)[0]
        choice = None
        for cand in ((u, v), (v, u)):
            a, b = cand
            if not knowledge.allows(a, b):
                continue
            if not _creates_directed_cycle(g.directed_edges, a, b) and not new_collider(g, a, b):
                choice = cand
                break
        if choice is None:
            choice = (u, v) if not _creates_directed_cycle(g.directed_edges, u, v) else (v, u)
        g.undirected_edges.discard(frozenset(choice))
        g.directed_edges.add(choice)
        g = _meek_closure(g, knowledge)

    dag = CausalDag(
        nodes=g.nodes,
        directed_edges=set(g.directed_edges),
        edge_confidence={e: 1.0 for e in g.directed_edges},
    )
    dag.topological_order()  # raises InternalInvariantError on a cycle
    return dag


# ---------------------------------------------------------------------------
# Bootstrap confidence and the full discovery entry point
# ---------------------------------------------------------------------------

def _run_pc(
    data: np.ndarray,
    alpha: float,
    l_max: int,
    names: tuple[str, ...],
    knowledge: BackgroundKnowledge | None,
    collider_rule: str = "majority",
) -> tuple[PartiallyDirectedGraph, CausalDag]:
    tester = _CachedTester(data, names, alpha)
    skeleton, sepsets = pc_skeleton(data, alpha, l_max, names, knowledge, tester=tester)
    ctx = (tester, l_max) if collider_rule == "majority" else None
    pdag = orient_v_structures(skeleton, sepsets, knowledge, majority_ctx=ctx)
    dag = apply_meek_rules(pdag, knowledge)
    dag.pattern = _meek_closure(pdag, knowledge)
    return skeleton, dag


def estimate_edge_confidence(
    data: np.ndarray,
    alpha: float,
    l_max: int,
    bootstrap: int,
    names: tuple[str, ...],
    seed: int = 0,
    knowledge: BackgroundKnowledge | None = None,
    collider_rule: str = "majority",
) -> tuple[dict[frozenset[str], float], dict[tuple[str, str], float]]:
    """Bootstrap over rows: skeleton presence fraction and orientation agreement.

    Skeleton confidence counts an edge in either orientation; orientation
    agreement is the fraction of present-edge resamples orienting it the
    same way as the majority.
    """
    if bootstrap < 1:
        raise ParameterError("bootstrap count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    n = data.shape[0]
    directed: dict[tuple[str, str], int] = {}
    for _ in range(bootstrap):
        rows = rng.integers(0, n, size=n)
        _, dag = _run_pc(data[rows], alpha, l_max, names, knowledge, collider_rule)
        for u, v in dag.directed_edges:
            directed[(u, v)] = directed.get((u, v), 0) + 1
    skeleton_conf: dict[frozenset[str], float] = {}
    for (u, v), c in directed.items():
        key = frozenset((u, v))
        skeleton_conf[key] = skeleton_conf.get(key, 0.0) + c / bootstrap
    orientation = {e: c / bootstrap for e, c in directed.items()}
    return skeleton_conf, orientation


@dataclass(frozen=True)
class DiscoveryConfig:
    alpha: float = 0.01
    l_max: int = 3
    bootstrap: int = 20
    seed: int = 0
    collider_rule: str = "majority"  # "majority" | "sepset"


def discover(
    data: np.ndarray,
    names: tuple[str, ...],
    config: DiscoveryConfig = DiscoveryConfig(),
    knowledge: BackgroundKnowledge | None = None,
) -> CausalDag:
    """Full discovery: skeleton + colliders + Meek + bootstrap edge confidence."""
    _, dag = _run_pc(data, config.alpha, config.l_max, names, knowledge, config.collider_rule)
    skel_conf, orient_conf = estimate_edge_confidence(
        data, config.alpha, config.l_max, config.bootstrap, names,
        seed=config.seed, knowledge=knowledge, collider_rule=config.collider_rule,
    )
    dag.edge_confidence = {
        (u, v): skel_conf.get(frozenset((u, v)), 0.0) for u, v in dag.directed_edges
    }
    dag.directed_confidence = {
        (u, v): orient_conf.get((u, v), 0.0) for u, v in dag.directed_edges
    }
    return dag


# ---------------------------------------------------------------------------
# Scoring against a known graph, drift monitor, serialization
# ---------------------------------------------------------------------------

def dag_to_cpdag(nodes: tuple[str, ...], edges: set[tuple[str, str]]) -> PartiallyDirectedGraph:
    """Pattern of a DAG: skeleton plus compelled v-structure orientations, Meek-closed."""
    adj = {frozenset(e) for e in edges}
    g = PartiallyDirectedGraph(nodes=nodes, undirected_edges=set(adj))
    directed: set[tuple[str, str]] = set()
    parents: dict[str, set[str]] = {v: set() for v in nodes}
    for u, v in edges:
        parents[v].add(u)
    for z in nodes:
        for x, y in itertools.combinations(sorted(parents[z]), 2):
            if frozenset((x, y)) not in adj:
                directed.add((x, z))
                directed.add((y, z))
    for e in directed:
        g.undirected_edges.discard(frozenset(e))
    g.directed_edges.update(directed)
    return _meek_closure(g)


def _pair_mark(g: PartiallyDirectedGraph, a: str, b: str) -> str:
    if frozenset((a, b)) in g.undirected_edges:
        return "-"
    if (a, b) in g.directed_edges:
        return ">"
    if (b, a) in g.directed_edges:
        return "<"
    return "."


def structural_hamming_distance(
    learned: PartiallyDirectedGraph, true_dag_edges: set[tuple[str, str]]
) -> int:
    """SHD between patterns: one count per pair whose mark class differs."""
    truth = dag_to_cpdag(learned.nodes, true_dag_edges)
    shd = 0
    for a, b in itertools.combinations(sorted(learned.nodes), 2):
        if _pair_mark(learned, a, b) != _pair_mark(truth, a, b):
            shd += 1
    return shd


def skeleton_f1(
    learned: PartiallyDirectedGraph | CausalDag, true_dag_edges: set[tuple[str, str]]
) -> float:
    if isinstance(learned, CausalDag):
        found = {frozenset(e) for e in learned.directed_edges}
    else:
        found = set(learned.undirected_edges) | {frozenset(e) for e in learned.directed_edges}
    truth = {frozenset(e) for e in true_dag_edges}
    tp = len(found & truth)
    if tp == 0:
        return 0.0
    precision = tp / len(found)
    recall = tp / len(truth)
    return 2 * precision * recall / (precision + recall)


def population_stability_index(
    reference: np.ndarray, current: np.ndarray, bins: int = 10
) -> float:
    """PSI over quantile bins of the reference sample."""
    qs = np.quantile(reference, np.linspace(0, 1, bins + 1))
    qs[0], qs[-1] = -np.inf, np.inf
    qs = np.unique(qs)
    ref_counts, _ = np.histogram(reference, bins=qs)
    cur_counts, _ = np.histogram(current, bins=qs)
    ref_frac = np.maximum(ref_counts / max(len(reference), 1), 1e-6)
    cur_frac = np.maximum(cur_counts / max(len(current), 1), 1e-6)
    return float(np.sum((cur_frac - ref_frac) * np.log(cur_frac / ref_frac)))


def drift_check(
    reference: np.ndarray, current: np.ndarray, threshold: float = 0.2
) -> tuple[bool, dict[int, float]]:
    """Flag 're-discover recommended' when any feature's PSI exceeds the threshold."""
    scores = {
        j: population_stability_index(reference[:, j], current[:, j])
        for j in range(reference.shape[1])
    }
    return any(v > threshold for v in scores.values()), scores


def dag_to_dict(dag: CausalDag) -> dict:
    return {
        "nodes": list(dag.nodes),
        "edges": [
            {
                "parent": u,
                "child": v,
                "confidence": dag.edge_confidence[(u, v)],
                "orientation_confidence": dag.orientation_confidence((u, v)),
            }
            for u, v in sorted(dag.directed_edges)
        ],
    }


def dag_from_dict(doc: dict) -> CausalDag:
    edges = {(e["parent"], e["child"]) for e in doc["edges"]}
    conf = {(e["parent"], e["child"]): float(e["confidence"]) for e in doc["edges"]}
    orient = {
        (e["parent"], e["child"]): float(e.get("orientation_confidence", e["confidence"]))
        for e in doc["edges"]
    }
    return CausalDag(
        nodes=tuple(doc["nodes"]),
        directed_edges=edges,
        edge_confidence=conf,
        directed_confidence=orient,
    )


def dag_to_dot(dag: CausalDag) -> str:
    lines = ["digraph causal {"]
    for v in dag.nodes:
        lines.append(f'  "{v}";')
    for u, v in sorted(dag.directed_edges):
        lines.append(f'  "{u}" -> "{v}" [label="{dag.edge_confidence[(u, v)]:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
