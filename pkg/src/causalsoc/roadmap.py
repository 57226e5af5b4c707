"""Investigation roadmap: ontology, MDP-DAG compilation, masks, rewards.

The variable-level causal DAG is compiled into an investigation-state DAG
whose edges are the only admissible transitions. An ontology edge
(s_i -> s_j) survives compilation iff s_j is a declared semantic successor
of s_i and every confident causal parent of s_j's required variables is
already covered by required variables along some roadmap path reaching s_i.
That coverage rule is what blocks evidence-free shortcuts such as jumping
straight from the initial alert to a mitigated terminal.

Action catalog (18 actions):

  =====================  =====================  ========================
  action                 class                  target state
  =====================  =====================  ========================
  triage_process_tree    triage                 TriageHost
  triage_auth_history    triage                 TriageHost
  triage_asset_context   triage                 TriageHost
  triage_alert_source    triage                 TriageHost
  collect_process_logs   evidence               CollectHostEvidence
  collect_file_activity  evidence               CollectHostEvidence
  collect_auth_events    evidence               CollectHostEvidence
  capture_flow_sample    evidence               CollectNetEvidence
  capture_dns_history    evidence               CollectNetEvidence
  capture_beacon_trace   evidence               CollectNetEvidence
  correlate_findings     evidence               CorrelateEvidence (also
                                                in-state re-correlation)
  wait_observe           evidence (in-state)    stays in place
  contain_isolate_host   containment            ContainIsolateHost
  contain_block_flow     containment            ContainBlockFlow
  close_mitigated        closure                ThreatMitigated
  close_benign           closure                BenignClosure
  escalate_to_human      escalation             EscalatedToHuman
  abort_investigation    abort                  InvestigationAborted
  =====================  =====================  ========================

In-state actions (wait_observe everywhere; correlate_findings while already
in CorrelateEvidence) refine evidence without changing the investigation
state. They are recorded as explicit self-transition rows in P and are not
roadmap edges: the roadmap graph stays acyclic and the consistency checks
treat only state-changing steps as transitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discovery import CausalDag
from .features import N_ACTIONS, STATES
from .telemetry import ParameterError

TERMINAL_STATES = (
    "ThreatMitigated",
    "BenignClosure",
    "EscalatedToHuman",
    "InvestigationAborted",
)

DISRUPTIVE_STATES = ("ContainIsolateHost", "ContainBlockFlow")


@dataclass(frozen=True)
class ActionSpec:
    name: str
    kind: str  # triage | evidence | containment | closure | escalation | abort
    target: str | None  # investigation state entered; None = pure in-state


ACTIONS: tuple[ActionSpec, ...] = (
    ActionSpec("triage_process_tree", "triage", "TriageHost"),
    ActionSpec("triage_auth_history", "triage", "TriageHost"),
    ActionSpec("triage_asset_context", "triage", "TriageHost"),
    ActionSpec("triage_alert_source", "triage", "TriageHost"),
    ActionSpec("collect_process_logs", "evidence", "CollectHostEvidence"),
    ActionSpec("collect_file_activity", "evidence", "CollectHostEvidence"),
    ActionSpec("collect_auth_events", "evidence", "CollectHostEvidence"),
    ActionSpec("capture_flow_sample", "evidence", "CollectNetEvidence"),
    ActionSpec("capture_dns_history", "evidence", "CollectNetEvidence"),
    ActionSpec("capture_beacon_trace", "evidence", "CollectNetEvidence"),
    ActionSpec("correlate_findings", "evidence", "CorrelateEvidence"),
    ActionSpec("wait_observe", "evidence", None),
    ActionSpec("contain_isolate_host", "containment", "ContainIsolateHost"),
    ActionSpec("contain_block_flow", "containment", "ContainBlockFlow"),
    ActionSpec("close_mitigated", "closure", "ThreatMitigated"),
    ActionSpec("close_benign", "closure", "BenignClosure"),
    ActionSpec("escalate_to_human", "escalation", "EscalatedToHuman"),
    ActionSpec("abort_investigation", "abort", "InvestigationAborted"),
)

assert len(ACTIONS) == N_ACTIONS

ACTION_INDEX = {a.name: i for i, a in enumerate(ACTIONS)}
ESCALATE_ACTION = ACTION_INDEX["escalate_to_human"]
DISRUPTIVE_ACTIONS = tuple(
    i for i, a in enumerate(ACTIONS) if a.target in DISRUPTIVE_STATES
)
EVIDENCE_CLASS_ACTIONS = tuple(
    i for i, a in enumerate(ACTIONS) if a.kind in ("triage", "evidence")
)


@dataclass(frozen=True)
class InvestigationOntology:
    states: tuple[str, ...]
    progression: frozenset[tuple[str, str]]  # semantic-successor relation
    required_vars: dict[str, frozenset[str]]
    disruptive_states: frozenset[str]

    def __post_init__(self) -> None:
        for s, t in self.progression:
            if s not in self.states or t not in self.states:
                raise ParameterError(f"progression pair ({s}, {t}) outside declared states")
            if s in TERMINAL_STATES and s in self.states:
                raise ParameterError(f"terminal state {s} cannot have successors")
        order = {s: i for i, s in enumerate(self.states)}
        for s, t in self.progression:
            if t not in TERMINAL_STATES and order[t] <= order[s]:
                raise ParameterError(
                    f"progression ({s}, {t}) violates the acyclic phase order"
                )

    def in_state_actions(self, state: str) -> tuple[int, ...]:
        if state in TERMINAL_STATES:
            return ()
        out = [ACTION_INDEX["wait_observe"]]
        if state == "CorrelateEvidence":
            out.append(ACTION_INDEX["correlate_findings"])
        return tuple(sorted(out))


def default_ontology(dag_nodes: tuple[str, ...]) -> InvestigationOntology:
    """Default eleven-state ontology bound to the layered default environment.

    Required variables follow the telemetry layer plan: alert indicators at
    triage, host/net activity at the evidence stages, correlation variables
    at the correlation stage, impact variables at containment/mitigation.
    """
    nodes = list(dag_nodes)
    if len(nodes) < 24:
        raise ParameterError("default ontology expects the 24-variable default environment")
    required = {
        "InitialAlert": frozenset(),
        "TriageHost": frozenset(nodes[0:2]),
        "CollectHostEvidence": frozenset(nodes[2:10]),
        "CollectNetEvidence": frozenset(nodes[10:18]),
        "CorrelateEvidence": frozenset(nodes[18:22]),
        "ContainIsolateHost": frozenset(nodes[22:24]),
        "ContainBlockFlow": frozenset(nodes[22:24]),
        "ThreatMitigated": frozenset(nodes[22:24]),
        "BenignClosure": frozenset(),
        "EscalatedToHuman": frozenset(),
        "InvestigationAborted": frozenset(),
    }
    progression: set[tuple[str, str]] = set()
    non_terminal = [s for s in STATES if s not in TERMINAL_STATES]
    for s in non_terminal:
        progression.add((s, "EscalatedToHuman"))
        progression.add((s, "InvestigationAborted"))
    progression.update(
        [
            ("InitialAlert", "TriageHost"),
            ("InitialAlert", "ThreatMitigated"),  # pruned by parent coverage
            ("TriageHost", "CollectHostEvidence"),
            ("TriageHost", "CollectNetEvidence"),  # pruned: net vars have host parents
            ("TriageHost", "BenignClosure"),
            ("CollectHostEvidence", "CollectNetEvidence"),
            ("CollectHostEvidence", "CorrelateEvidence"),  # pruned: corr vars need net
            ("CollectNetEvidence", "CorrelateEvidence"),
            ("CorrelateEvidence", "ContainIsolateHost"),
            ("CorrelateEvidence", "ContainBlockFlow"),
            ("CorrelateEvidence", "BenignClosure"),
            ("ContainIsolateHost", "ContainBlockFlow"),
            ("ContainIsolateHost", "ThreatMitigated"),
            ("ContainBlockFlow", "ThreatMitigated"),
        ]
    )
    return InvestigationOntology(
        states=STATES,
        progression=frozenset(progression),
        required_vars=required,
        disruptive_states=frozenset(DISRUPTIVE_STATES),
    )


@dataclass
class RoadmapDag:
    nodes: tuple[str, ...]
    edges: dict[tuple[str, str], float]  # (s, s') -> confidence
    constraint_class: dict[tuple[str, str], str]  # hard | soft
    tau_c: float

    def __post_init__(self) -> None:
        self.topological_order()
        for e, conf in self.edges.items():
            expected = "hard" if conf >= self.tau_c else "soft"
            if self.constraint_class[e] != expected:
                raise ParameterError(f"constraint class of {e} inconsistent with tau_c")

    def successors(self, s: str) -> tuple[str, ...]:
        return tuple(sorted(t for (u, t) in self.edges if u == s))

    def topological_order(self) -> list[str]:
        indeg = {v: 0 for v in self.nodes}
        for _, t in self.edges:
            indeg[t] += 1
        queue = sorted(v for v in self.nodes if indeg[v] == 0)
        order = []
        while queue:
            v = queue.pop(0)
            order.append(v)
            for u, t in sorted(self.edges):
                if u == v:
                    indeg[t] -= 1
                    if indeg[t] == 0:
                        queue.append(t)
        if len(order) != len(self.nodes):
            raise ParameterError("roadmap contains a cycle")
        return order


class RoadmapConnectivityError(ValueError):
    """A terminal state is unreachable from InitialAlert."""


def build_roadmap(
    dag: CausalDag,
    ontology: InvestigationOntology,
    tau_c: float = 0.7,
    parent_confidence_floor: float = 0.6,
) -> RoadmapDag:
    """Compile ontology + learned DAG into the admissible-transition roadmap.

    Edge confidence is the minimum confidence over the causal edges that
    support the target state's required variables. Parents whose bootstrap
    orientation confidence falls below ``parent_confidence_floor`` are not
    treated as required prerequisites: an edge whose direction the bootstrap
    cannot settle must not sever the investigation map.
    """
    for s, vs in ontology.required_vars.items():
        unknown = vs - set(dag.nodes)
        if unknown:
            raise ParameterError(f"state {s} requires unknown variables {sorted(unknown)}")

    confident_parents: dict[str, tuple[str, ...]] = {}
    for v in dag.nodes:
        pars = [
            p
            for p in dag.parents(v)
            if dag.orientation_confidence((p, v)) >= parent_confidence_floor
        ]
        confident_parents[v] = tuple(pars)

    def edge_confidence(s_j: str) -> float:
        conf = 1.0
        for v in sorted(ontology.required_vars.get(s_j, frozenset())):
            for p in confident_parents[v]:
                conf = min(conf, dag.edge_confidence[(p, v)])
        return conf

    def covered(cover: frozenset[str], s_j: str) -> bool:
        # the target's own required batch is collected together, so parents
        # inside it count as satisfied
        req = ontology.required_vars.get(s_j, frozenset())
        have = cover | req
        return all(p in have for v in req for p in confident_parents[v])

    # Per state, the antichain of coverage sets reachable along distinct
    # accepted-edge paths from InitialAlert ("covered along at least one
    # path" semantics, computed by forward traversal).
    start = "InitialAlert"
    coverage: dict[str, list[frozenset[str]]] = {
        start: [frozenset(ontology.required_vars.get(start, frozenset()))]
    }
    edges: dict[tuple[str, str], float] = {}
    order = {s: i for i, s in enumerate(ontology.states)}
    frontier = [start]
    while frontier:
        frontier.sort(key=lambda s: order[s])
        s_i = frontier.pop(0)
        for (a, s_j) in sorted(ontology.progression):
            if a != s_i:
                continue
            passing = [c for c in coverage[s_i] if covered(c, s_j)]
            if not passing:
                continue
            edges[(s_i, s_j)] = edge_confidence(s_j)
            grown = False
            existing = coverage.setdefault(s_j, [])
            for c in passing:
                new_cover = c | ontology.required_vars.get(s_j, frozenset())
                if any(new_cover <= have for have in existing):
                    continue
                existing[:] = [have for have in existing if not have <= new_cover]
                existing.append(new_cover)
                grown = True
            if grown and s_j not in TERMINAL_STATES:
                frontier.append(s_j)

    missing = [t for t in TERMINAL_STATES if not any(e[1] == t for e in edges)]
    if missing or not edges:
        raise RoadmapConnectivityError(
            f"terminal states unreachable from InitialAlert: {missing or ontology.states}"
        )

    classes = {e: ("hard" if c >= tau_c else "soft") for e, c in edges.items()}
    return RoadmapDag(
        nodes=ontology.states, edges=edges, constraint_class=classes, tau_c=tau_c
    )


@dataclass
class ConstrainedMdp:
    roadmap: RoadmapDag
    ontology: InvestigationOntology
    gamma: float = 0.99
    # (state, action) -> {next_state: probability}; populated on construction
    transitions: dict[tuple[str, int], dict[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.transitions:
            self.transitions = self._declared_transitions()
        for (s, a), row in self.transitions.items():
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ParameterError(f"P row for ({s}, action {a}) sums to {total}")
            for s2 in row:
                if s2 != s and (s, s2) not in self.roadmap.edges:
                    raise ParameterError(
                        f"transition ({s} -> {s2}) not on the roadmap"
                    )

    def _declared_transitions(self) -> dict[tuple[str, int], dict[str, float]]:
        rows: dict[tuple[str, int], dict[str, float]] = {}
        for s in self.roadmap.nodes:
            if s in TERMINAL_STATES:
                continue
            succ = set(self.roadmap.successors(s))
            for i, spec in enumerate(ACTIONS):
                if spec.target is not None and spec.target in succ:
                    rows[(s, i)] = {spec.target: 1.0}
            for i in self.ontology.in_state_actions(s):
                rows[(s, i)] = {s: 1.0}
        return rows

    def action_mask(self, s: str) -> np.ndarray:
        mask = np.zeros(N_ACTIONS, dtype=bool)
        if s in TERMINAL_STATES:
            return mask
        for (state, a) in self.transitions:
            if state == s:
                mask[a] = True
        return mask

    def mask_table(self) -> dict[str, np.ndarray]:
        return {s: self.action_mask(s) for s in self.roadmap.nodes}

    def step_state(self, s: str, action: int) -> str:
        row = self.transitions.get((s, action))
        if row is None:
            raise ParameterError(f"action {ACTIONS[action].name} inadmissible at {s}")
        # single-successor rows everywhere in the default catalog
        return max(row.items(), key=lambda kv: kv[1])[0]


def admissible_actions(mdp: ConstrainedMdp, s: str) -> np.ndarray:
    if s not in mdp.roadmap.nodes:
        raise ParameterError(f"unknown state {s!r}")
    return mdp.action_mask(s)


def full_connectivity_mdp(ontology: InvestigationOntology, gamma: float = 0.99) -> ConstrainedMdp:
    """Ablation variant: every action admissible at every non-terminal state.

    The masking structure becomes the complete digraph over investigation
    states; terminals still absorb.
    """
    edges: dict[tuple[str, str], float] = {}
    order = {s: i for i, s in enumerate(ontology.states)}
    for s in ontology.states:
        if s in TERMINAL_STATES:
            continue
        for t in ontology.states:
            if t != s:
                edges[(s, t)] = 1.0
    # the complete digraph is cyclic; bypass RoadmapDag's acyclicity check by
    # building transitions directly against a spanning acyclic skeleton and
    # recording the full transition table explicitly.
    skeleton_edges = {
        (s, t): 1.0 for (s, t) in edges if order[t] > order[s]
    }
    roadmap = RoadmapDag(
        nodes=ontology.states,
        edges=skeleton_edges,
        constraint_class={e: "hard" for e in skeleton_edges},
        tau_c=0.0,
    )
    transitions: dict[tuple[str, int], dict[str, float]] = {}
    for s in ontology.states:
        if s in TERMINAL_STATES:
            continue
        for i, spec in enumerate(ACTIONS):
            if spec.target is not None and spec.target != s:
                transitions[(s, i)] = {spec.target: 1.0}
        for i in ontology.in_state_actions(s):
            transitions[(s, i)] = {s: 1.0}
    mdp = ConstrainedMdp.__new__(ConstrainedMdp)
    mdp.roadmap = roadmap
    mdp.ontology = ontology
    mdp.gamma = gamma
    mdp.transitions = transitions
    return mdp


def estimate_transitions(
    mdp: ConstrainedMdp,
    traces: list[list[tuple[str, int, str]]],
    smoothing: float = 1.0,
) -> dict[tuple[str, int], dict[str, float]]:
    """Additive-smoothing frequency estimates over declared successors only."""
    declared = mdp._declared_transitions()
    counts: dict[tuple[str, int], dict[str, float]] = {
        key: {s2: 0.0 for s2 in row} for key, row in declared.items()
    }
    for ti, trace in enumerate(traces):
        for si, (s, a, s2) in enumerate(trace):
            key = (s, a)
            if key not in counts or s2 not in counts[key]:
                raise ParameterError(
                    f"trace {ti} step {si}: transition ({s}, {ACTIONS[a].name}, {s2}) "
                    "is not on the roadmap"
                )
            counts[key][s2] += 1.0
    out: dict[tuple[str, int], dict[str, float]] = {}
    for key, row in counts.items():
        total = sum(row.values()) + smoothing * len(row)
        if total == 0:
            raise ParameterError(
                f"no data and zero smoothing for admissible pair {key}"
            )
        out[key] = {s2: (c + smoothing) / total for s2, c in row.items()}
    return out


# ---------------------------------------------------------------------------
# Reward specification
# ---------------------------------------------------------------------------

#: Engine reward table. Signs and orderings: verified mitigation dominates,
#: disruptive false positives cost Blue heavily while opposing them pays Red,
#: evidence gains are small and positive, Blue's step penalty exceeds Red's,
#: the roadmap-violation branch is unreachable under masking and asserted.
REWARD_TABLE = {
    "verified_mitigation": {"blue": 10.0, "red": 2.0},
    "correct_benign_closure": {"blue": 5.0, "red": 3.0},
    "missed_threat": {"blue": -8.0, "red": -2.0},
    "false_positive_cost": {"blue": -8.0, "red": -2.0},
    "unchallenged_false_positive_extra": {"blue": 0.0, "red": -4.0},
    "prevented_unjustified": {"blue": 0.0, "red": 6.0},
    "wrongly_vetoed_justified": {"blue": 0.0, "red": -6.0},
    "info_gain": {"blue": 1.0, "red": 1.0},
    "escalation": {"blue": -0.5, "red": 0.5},
    "step_penalty": {"blue": -0.10, "red": -0.05},
    "roadmap_violation": {"blue": -5.0, "red": -5.0},
    # expiry of the decision budget without a terminal: timeliness pressure,
    # label-independent
    "timeout": {"blue": -4.0, "red": -2.0},
}

assert REWARD_TABLE["step_penalty"]["blue"] < REWARD_TABLE["step_penalty"]["red"] < 0


@dataclass
class OutcomeFlags:
    verified_mitigation: bool = False
    correct_benign_closure: bool = False
    missed_threat: bool = False
    false_positive_cost: bool = False
    red_endorsed_false_positive: bool = False
    prevented_unjustified: bool = False
    wrongly_vetoed_justified: bool = False
    info_gain: bool = False
    uncertainty_high: bool = False
    escalation: bool = False
    divergence_exceeded: bool = False
    terminal: bool = False


def reward(
    mdp: ConstrainedMdp,
    s: str,
    action: int,
    s_next: str,
    flags: OutcomeFlags,
    team: str,
) -> float:
    """Team-specific reward for an executed, admissible transition."""
    if team not in ("blue", "red"):
        raise ParameterError(f"unknown team {team!r}")
    row = mdp.transitions.get((s, action))
    if row is None or s_next not in row:
        # unreachable under masking by construction
        raise AssertionError(
            f"roadmap violation reached reward(): ({s}, {ACTIONS[action].name}, {s_next})"
        )
    t = REWARD_TABLE
    r = 0.0
    if flags.verified_mitigation:
        r += t["verified_mitigation"][team]
    if flags.correct_benign_closure:
        r += t["correct_benign_closure"][team]
    if flags.missed_threat:
        r += t["missed_threat"][team]
    if flags.false_positive_cost:
        r += t["false_positive_cost"][team]
        if team == "red" and flags.red_endorsed_false_positive:
            r += t["unchallenged_false_positive_extra"][team]
    if flags.prevented_unjustified:
        r += t["prevented_unjustified"][team]
    if flags.wrongly_vetoed_justified:
        r += t["wrongly_vetoed_justified"][team]
    if flags.info_gain:
        if team == "blue":
            r += t["info_gain"]["blue"]
        elif flags.uncertainty_high:
            r += t["info_gain"]["red"]
    if flags.escalation:
        if team == "blue":
            r += t["escalation"]["blue"]
        elif flags.divergence_exceeded:
            r += t["escalation"]["red"]
    if not flags.terminal:
        r += t["step_penalty"][team]
    return r


def roadmap_to_dict(roadmap: RoadmapDag) -> dict:
    return {
        "nodes": list(roadmap.nodes),
        "tau_c": roadmap.tau_c,
        "edges": [
            {
                "from": s,
                "to": t,
                "confidence": c,
                "class": roadmap.constraint_class[(s, t)],
            }
            for (s, t), c in sorted(roadmap.edges.items())
        ],
    }


def roadmap_from_dict(doc: dict) -> RoadmapDag:
    edges = {(e["from"], e["to"]): float(e["confidence"]) for e in doc["edges"]}
    classes = {(e["from"], e["to"]): e["class"] for e in doc["edges"]}
    return RoadmapDag(
        nodes=tuple(doc["nodes"]),
        edges=edges,
        constraint_class=classes,
        tau_c=float(doc["tau_c"]),
    )


def roadmap_to_dot(roadmap: RoadmapDag) -> str:
    lines = ["digraph roadmap {", "  rankdir=LR;"]
    for s in roadmap.nodes:
        shape = "doubleoctagon" if s in TERMINAL_STATES else "box"
        lines.append(f'  "{s}" [shape={shape}];')
    for (s, t), c in sorted(roadmap.edges.items()):
        style = "solid" if roadmap.constraint_class[(s, t)] == "hard" else "dashed"
        lines.append(f'  "{s}" -> "{t}" [label="{c:.2f}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
