"""Elastic container platform model: reconciliation and the node execution pipeline.

The platform compares the intended cluster size (rho) with the current size
(sigma) and derives scaling actions. Each action runs through the provider's
execution pipeline (create node, adjust security group, join; or drain and
terminate, adjust security group) with that provider's measured durations.
Simulation time is kept in integer milliseconds.
"""

from __future__ import annotations

import heapq
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from itertools import count, groupby
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .utils.errors import InvalidInputError, InvariantViolation, validate_model

logger = logging.getLogger(__name__)

PROVIDERS_DIR = Path(__file__).parent / "fixtures" / "providers"
PROVIDER_ALIASES = {"os": "openstack"}


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


def to_s(ms: int) -> float:
    return ms / 1000


class ProviderProfile(BaseModel):
    """Median durations of the IaaS/platform operations of one provider."""

    model_config = ConfigDict(frozen=True)

    name: str
    creation_s: float = Field(ge=0)
    secgroup_s: float = Field(ge=0)
    join_s: float = Field(ge=0)
    terminate_s: float = Field(ge=0)
    published_total_s: float = Field(ge=0)
    region: Optional[str] = None
    master_type: Optional[str] = None
    worker_type: Optional[str] = None

    @model_validator(mode="after")
    def _total_covers_phases(self) -> "ProviderProfile":
        longest = max(self.creation_s, self.secgroup_s, self.join_s, self.terminate_s)
        if self.published_total_s < longest:
            raise ValueError(
                f"published_total_s {self.published_total_s} is shorter than a single phase"
            )
        return self

    @property
    def component_sum_s(self) -> float:
        return self.creation_s + self.secgroup_s + self.join_s + self.terminate_s

    @property
    def residual_s(self) -> float:
        """Calibration residual carried by the final pipeline phase."""
        return max(self.published_total_s - self.component_sum_s, 0.0)

    @property
    def regeneration_s(self) -> float:
        return self.component_sum_s + self.residual_s


def available_providers() -> List[str]:
    return sorted(p.stem for p in PROVIDERS_DIR.glob("*.json"))


def load_provider_profile(name_or_path: Union[str, Path]) -> ProviderProfile:
    """Load a shipped profile by name (aws, gce, azure, openstack) or a JSON file."""
    raw = str(name_or_path)
    key = PROVIDER_ALIASES.get(raw.lower(), raw.lower())
    path = PROVIDERS_DIR / f"{key}.json"
    if not path.exists():
        path = Path(raw)
        if path.suffix != ".json" or not path.exists():
            raise InvalidInputError(
                f"unknown provider {raw!r}; available: {', '.join(available_providers())}"
            )
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"cannot load provider profile {path}: {e}") from e
    return validate_model(ProviderProfile, data)


class NodePhase(str, Enum):
    CREATING = "creating"
    JOINING = "joining"
    ACTIVE = "active"
    DRAINING = "draining"
    TERMINATING = "terminating"
    GONE = "gone"


_NEXT_PHASE = {
    NodePhase.CREATING: NodePhase.JOINING,
    NodePhase.JOINING: NodePhase.ACTIVE,
    NodePhase.ACTIVE: NodePhase.DRAINING,
    NodePhase.DRAINING: NodePhase.TERMINATING,
    NodePhase.TERMINATING: NodePhase.GONE,
}


@dataclass
class Node:
    id: str
    phase: NodePhase = NodePhase.CREATING
    compromised: bool = False
    created_at_ms: int = 0
    activated_at_ms: Optional[int] = None
    containers: List[str] = field(default_factory=list)

    def advance(self, target: NodePhase) -> None:
        if _NEXT_PHASE.get(self.phase) != target:
            raise InvariantViolation(
                f"node {self.id}: illegal phase transition {self.phase.value} -> {target.value}"
            )
        self.phase = target
        if target not in (NodePhase.ACTIVE, NodePhase.DRAINING):
            self.compromised = False


@dataclass
class ClusterState:
    intended_size: int
    nodes: Dict[str, Node] = field(default_factory=dict)
    secgroup: Set[str] = field(default_factory=set)
    next_seq: int = 1
    unplaced: List[str] = field(default_factory=list)
    availability_losses: int = 0

    @property
    def current_size(self) -> int:
        return sum(1 for n in self.nodes.values() if n.phase == NodePhase.ACTIVE)

    def active_nodes(self) -> List[Node]:
        return [n for _, n in sorted(self.nodes.items()) if n.phase == NodePhase.ACTIVE]

    def node_id(self, offset: int = 0) -> str:
        return f"node-{self.next_seq + offset:05d}"

    def container_count(self) -> int:
        return len(self.unplaced) + sum(len(n.containers) for n in self.nodes.values())

    def compromised_nodes(self) -> List[Node]:
        return [n for n in self.nodes.values() if n.compromised]

    def check_invariants(self) -> None:
        for node in self.nodes.values():
            if node.phase == NodePhase.ACTIVE and node.id not in self.secgroup:
                raise InvariantViolation(f"active node {node.id} is not admitted to the secgroup")
            if node.compromised and node.phase not in (NodePhase.ACTIVE, NodePhase.DRAINING):
                raise InvariantViolation(f"node {node.id} compromised in phase {node.phase.value}")


def bootstrap_cluster(size: int, containers: int = 0) -> ClusterState:
    """A cluster of ``size`` active, admitted nodes at t=0 with containers spread round-robin."""
    if size < 1:
        raise InvalidInputError(f"cluster size must be >= 1, got {size}")
    state = ClusterState(intended_size=size)
    for _ in range(size):
        node = Node(id=state.node_id(), phase=NodePhase.ACTIVE, activated_at_ms=0)
        state.nodes[node.id] = node
        state.secgroup.add(node.id)
        state.next_seq += 1
    _place(state, [f"container-{i + 1:05d}" for i in range(containers)], state.active_nodes())
    return state


class RegenerationStrategy(str, Enum):
    ROLLING_ONE = "rolling_one"
    DOUBLING = "doubling"
    NSTEP_ROLLING = "nstep_rolling"


class VictimSelection(str, Enum):
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"


class RegenerationPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: RegenerationStrategy = RegenerationStrategy.ROLLING_ONE
    cadence_s: float = Field(default=0, ge=0)


class ActionKind(str, Enum):
    CREATE_NODE = "create_node"
    ADJUST_SECGROUP = "adjust_secgroup"
    JOIN_NODE = "join_node"
    DRAIN_AND_TERMINATE = "drain_and_terminate"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    node_id: str


class EventKind(str, Enum):
    NODE_CREATE_DONE = "node_create_done"
    SECGROUP_ADJUSTED = "secgroup_adjusted"
    NODE_JOINED = "node_joined"
    NODE_TERMINATED = "node_terminated"
    REGEN_TICK = "regen_tick"
    COMPROMISE = "compromise"
    DIVERSIFY_TICK = "diversify_tick"
    ATTACK_REPLAY = "attack_replay"


CLUSTER_EVENTS = frozenset(
    {
        EventKind.NODE_CREATE_DONE,
        EventKind.SECGROUP_ADJUSTED,
        EventKind.NODE_JOINED,
        EventKind.NODE_TERMINATED,
    }
)


@dataclass(frozen=True)
class SimEvent:
    at_ms: int
    kind: EventKind
    node_id: Optional[str] = None
    payload: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    @property
    def at_s(self) -> float:
        return to_s(self.at_ms)


class EventQueue:
    """Events in nondecreasing time order; ties break by insertion order."""

    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, SimEvent]] = []
        self._seq = count()
        self.last_ms = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, event: SimEvent) -> None:
        if event.at_ms < self.last_ms:
            raise InvariantViolation(
                f"event {event.kind.value} at {event.at_ms} ms is in the past"
                f" (now {self.last_ms} ms)"
            )
        heapq.heappush(self._heap, (event.at_ms, next(self._seq), event))

    def extend(self, events: Iterable[SimEvent]) -> None:
        for event in events:
            self.push(event)

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> SimEvent:
        if not self._heap:
            raise InvariantViolation("pop from an empty event queue")
        at_ms, _, event = heapq.heappop(self._heap)
        self.last_ms = at_ms
        return event


def reconcile(
    state: ClusterState,
    rng: Optional[random.Random] = None,
    *,
    candidates: Optional[Iterable[str]] = None,
    selection: Union[VictimSelection, str] = VictimSelection.RANDOM,
) -> List[Action]:
    """Derive the scaling actions that move sigma to rho.

    Growing emits (create, secgroup, join) per missing node; shrinking emits
    (drain_and_terminate, secgroup) per surplus node. Shrink victims are drawn
    from ``candidates`` when any of them is active, otherwise from all active
    nodes. The oldest nodes go first; ``random`` selection uses ``rng`` to
    choose among nodes created at the same time.
    """
    rho, sigma = state.intended_size, state.current_size
    actions: List[Action] = []
    if rho > sigma:
        for offset in range(rho - sigma):
            node_id = state.node_id(offset)
            actions += [
                Action(ActionKind.CREATE_NODE, node_id),
                Action(ActionKind.ADJUST_SECGROUP, node_id),
                Action(ActionKind.JOIN_NODE, node_id),
            ]
    elif rho < sigma:
        for victim in _select_victims(state, sigma - rho, rng, candidates, selection):
            actions += [
                Action(ActionKind.DRAIN_AND_TERMINATE, victim.id),
                Action(ActionKind.ADJUST_SECGROUP, victim.id),
            ]
    return actions


def _select_victims(
    state: ClusterState,
    k: int,
    rng: Optional[random.Random],
    candidates: Optional[Iterable[str]],
    selection: Union[VictimSelection, str],
) -> List[Node]:
    active = state.active_nodes()
    wanted = set(candidates or ())
    pool = [n for n in active if n.id in wanted] or active
    rest = [n for n in active if n not in pool]
    round_robin = VictimSelection(selection) == VictimSelection.ROUND_ROBIN

    def pick(nodes: List[Node], n: int) -> List[Node]:
        # oldest first; random picks only break ties between nodes created together
        chosen: List[Node] = []
        ordered = sorted(nodes, key=lambda node: (node.created_at_ms, node.id))
        for _, group in groupby(ordered, key=lambda node: node.created_at_ms):
            wanted_now = n - len(chosen)
            if wanted_now <= 0:
                break
            group = list(group)
            if round_robin or len(group) <= wanted_now:
                chosen += group[:wanted_now]
            else:
                chosen += (rng or random.Random(0)).sample(group, wanted_now)
        return chosen

    victims = pick(pool, k)
    return victims + pick(rest, k - len(victims))


def begin_actions(state: ClusterState, actions: Iterable[Action], now_ms: int) -> ClusterState:
    """Register nodes being created and move shrink victims to draining."""
    for action in actions:
        if action.kind == ActionKind.CREATE_NODE:
            if action.node_id in state.nodes:
                raise InvariantViolation(f"node {action.node_id} already exists")
            state.nodes[action.node_id] = Node(id=action.node_id, created_at_ms=now_ms)
            state.next_seq = max(state.next_seq, int(action.node_id.rsplit("-", 1)[1]) + 1)
        elif action.kind == ActionKind.DRAIN_AND_TERMINATE:
            _node(state, action.node_id).advance(NodePhase.DRAINING)
    return state


def schedule_pipeline(
    actions: Iterable[Action],
    profile: ProviderProfile,
    now_ms: int,
    *,
    parallel: bool = False,
) -> List[SimEvent]:
    """Turn reconcile's actions into timed completion events.

    Phases of one node serialize. Nodes follow one another unless ``parallel``
    is set, in which case every node's pipeline starts at ``now_ms``.
    """
    groups: Dict[str, List[Action]] = {}
    for action in actions:
        groups.setdefault(action.node_id, []).append(action)

    events: List[SimEvent] = []
    cursor = now_ms
    for node_id, node_actions in groups.items():
        t = now_ms if parallel else cursor
        shrinking = any(a.kind == ActionKind.DRAIN_AND_TERMINATE for a in node_actions)
        for action in node_actions:
            if action.kind == ActionKind.CREATE_NODE:
                t += to_ms(profile.creation_s)
                events.append(SimEvent(t, EventKind.NODE_CREATE_DONE, node_id))
            elif action.kind == ActionKind.ADJUST_SECGROUP:
                if shrinking:
                    t += to_ms(profile.residual_s)
                    payload = {"op": "revoke"}
                else:
                    t += to_ms(profile.secgroup_s)
                    payload = {"op": "admit"}
                events.append(SimEvent(t, EventKind.SECGROUP_ADJUSTED, node_id, payload))
            elif action.kind == ActionKind.JOIN_NODE:
                t += to_ms(profile.join_s)
                events.append(SimEvent(t, EventKind.NODE_JOINED, node_id))
            elif action.kind == ActionKind.DRAIN_AND_TERMINATE:
                t += to_ms(profile.terminate_s)
                events.append(SimEvent(t, EventKind.NODE_TERMINATED, node_id))
        cursor = max(cursor, t)
    return events


def plan_regeneration(policy: RegenerationPolicy, n: int) -> List[int]:
    """Sequence of intended sizes that regenerates nodes of an ``n``-node cluster."""
    if n < 1:
        raise InvalidInputError(f"cluster size must be >= 1, got {n}")
    if policy.strategy == RegenerationStrategy.ROLLING_ONE:
        return [n + 1, n]
    if policy.strategy == RegenerationStrategy.DOUBLING:
        return [2 * n, n]
    return [n + 1, n] * n


def _node(state: ClusterState, node_id: Optional[str]) -> Node:
    try:
        return state.nodes[node_id]  # type: ignore[index]
    except KeyError:
        raise InvariantViolation(f"event for unknown node {node_id}") from None


def _place(state: ClusterState, containers: List[str], targets: List[Node]) -> None:
    for i, container in enumerate(containers):
        targets[i % len(targets)].containers.append(container)


def apply_event(state: ClusterState, event: SimEvent) -> ClusterState:
    """Advance the cluster by one due pipeline event. Non-cluster events are ignored."""
    if event.kind not in CLUSTER_EVENTS:
        return state
    if event.kind == EventKind.SECGROUP_ADJUSTED and event.payload.get("op") == "revoke":
        # the node is already gone when its secgroup entry is revoked
        state.secgroup.discard(event.node_id)
        return state
    node = _node(state, event.node_id)
    if event.kind == EventKind.NODE_CREATE_DONE:
        node.advance(NodePhase.JOINING)
    elif event.kind == EventKind.SECGROUP_ADJUSTED:
        state.secgroup.add(node.id)
    elif event.kind == EventKind.NODE_JOINED:
        if node.id not in state.secgroup:
            raise InvariantViolation(f"node {node.id} joined before secgroup admission")
        node.advance(NodePhase.ACTIVE)
        node.activated_at_ms = event.at_ms
        node.compromised = False
        if state.unplaced:
            node.containers.extend(state.unplaced)
            state.unplaced.clear()
    elif event.kind == EventKind.NODE_TERMINATED:
        node.advance(NodePhase.TERMINATING)
        node.advance(NodePhase.GONE)
        del state.nodes[node.id]
        reschedule_containers(state, node)
    return state


def reschedule_containers(state: ClusterState, departing: Node) -> ClusterState:
    """Restart the departing node's containers round-robin on the remaining active nodes."""
    containers, departing.containers = departing.containers, []
    if not containers:
        return state
    targets = [n for n in state.active_nodes() if n.id != departing.id]
    if not targets:
        state.availability_losses += 1
        state.unplaced.extend(containers)
        logger.warning(
            "No active node left for %d containers of %s; availability lost",
            len(containers),
            departing.id,
        )
        return state
    _place(state, containers, targets)
    return state


def regeneration_throughput(profile: ProviderProfile, horizon_s: float) -> int:
    """Nodes regenerable back-to-back, one at a time, within ``horizon_s``."""
    if horizon_s <= 0:
        raise InvalidInputError(f"horizon must be positive, got {horizon_s}")
    per_node = to_ms(profile.regeneration_s)
    if per_node == 0:
        raise InvalidInputError(f"profile {profile.name} has a zero regeneration time")
    return to_ms(horizon_s) // per_node
