"""Routing and wavelength assignment over the fiber graph.

Routing is minimum-total-dB path finding with a deterministic lexicographic
tie-break; wavelength assignment is first-fit over the source's conjugate
channel pairs (grid index i pairs with N + 1 - i). Route-first then assign:
the two concerns stay sequential, no joint optimization.

All functions are pure over the immutable topology plus an explicit
:class:`ChannelLedger` value; callers serialize ledger mutations.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .exceptions import LedgerError, UnreachableError
from .topology import (Link, LinkId, NodeKind, Topology, WavelengthChannel,
                       path_loss_db, validate_coexistence, walk_nodes)


@dataclass(frozen=True)
class RouteMetric:
    """Which loss terms weigh a link. Fiber + insertion dB are always in."""

    include_pdl: bool = False
    forbid_coexistence_violations: bool = True


WeightOverrides = Mapping[LinkId, float]
PathFilter = Callable[[tuple[str, ...]], bool]


def _link_weight(link: Link, metric: RouteMetric,
                 overrides: Optional[WeightOverrides]) -> float:
    if overrides is not None and link.link_id in overrides:
        base = overrides[link.link_id]
        if metric.include_pdl:
            base += link.pdl_db
        return base
    return link.weight_db(metric.include_pdl)


def _switch_cost(topology: Topology, node_id: str) -> float:
    node = topology.node(node_id)
    if node.kind is NodeKind.SWITCH:
        return node.info.insertion_loss_db
    return 0.0


def path_weight(topology: Topology, node_seq: Sequence[str], metric: RouteMetric,
                overrides: Optional[WeightOverrides] = None) -> float:
    """Weight of a node sequence: link terms plus interior switch loss."""
    total = 0.0
    for a, b in zip(node_seq, node_seq[1:]):
        link = topology.link_between(a, b)
        if link is None:
            raise UnreachableError(f"no link {a}-{b}")
        total += _link_weight(link, metric, overrides)
    for node_id in node_seq[1:-1]:
        total += _switch_cost(topology, node_id)
    return total


def _links_for(topology: Topology, node_seq: Sequence[str]) -> list[Link]:
    return [topology.link_between(a, b) for a, b in zip(node_seq, node_seq[1:])]


def _dijkstra(topology: Topology, metric: RouteMetric, src: str, dst: str,
              overrides: Optional[WeightOverrides],
              banned_nodes: frozenset[str] = frozenset(),
              banned_links: frozenset[LinkId] = frozenset()) -> Optional[tuple[str, ...]]:
    """Minimum-weight path as a node sequence, ties broken by the
    lexicographically smallest node sequence. Returns None if unreachable.

    The heap priority is (weight, node sequence); both grow monotonically
    along an extension, so the first settle of ``dst`` is optimal and the
    tie-break is exact rather than heuristic.
    """
    start: tuple[float, tuple[str, ...]] = (0.0, (src,))
    heap = [start]
    settled: set[str] = set()
    while heap:
        weight, seq = heapq.heappop(heap)
        here = seq[-1]
        if here in settled:
            continue
        settled.add(here)
        if here == dst:
            return seq
        for link in topology.incident_links(here):
            if link.link_id in banned_links:
                continue
            there = link.other_end(here)
            if there in settled or there in banned_nodes or there in seq:
                continue
            step = weight + _link_weight(link, metric, overrides)
            if there != dst:
                step += _switch_cost(topology, there)
            if not math.isfinite(step):
                continue  # infinite override marks a link out of service
            heapq.heappush(heap, (step, seq + (there,)))
    return None


def shortest_path(topology: Topology, metric: RouteMetric, src: str, dst: str,
                  weight_overrides: Optional[WeightOverrides] = None) -> list[Link]:
    """Minimum-weight loopless path from src to dst.

    Raises :class:`UnreachableError` when no path exists. Identical inputs
    always return the identical path.
    """
    if src == dst:
        raise UnreachableError(f"src and dst are both {src!r}")
    topology.node(src)
    topology.node(dst)
    seq = _dijkstra(topology, metric, src, dst, weight_overrides)
    if seq is None:
        raise UnreachableError(f"no path from {src} to {dst}")
    return _links_for(topology, seq)


def k_shortest_paths(topology: Topology, metric: RouteMetric, src: str, dst: str,
                     k: int, weight_overrides: Optional[WeightOverrides] = None
                     ) -> list[list[Link]]:
    """Up to k loopless paths in ascending (weight, node-sequence) order.

    Yen's algorithm over the deterministic Dijkstra above; may return fewer
    than k paths and returns [] when the endpoints are disconnected.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    first = _dijkstra(topology, metric, src, dst, weight_overrides)
    if first is None:
        return []

    def weigh(seq: tuple[str, ...]) -> float:
        return path_weight(topology, seq, metric, weight_overrides)

    accepted: list[tuple[str, ...]] = [first]
    candidates: list[tuple[float, tuple[str, ...]]] = []
    while len(accepted) < k:
        prev = accepted[-1]
        for i in range(len(prev) - 1):
            spur_node = prev[i]
            root = prev[: i + 1]
            banned_links = set()
            for seq in accepted:
                if seq[: i + 1] == root and len(seq) > i + 1:
                    link = topology.link_between(seq[i], seq[i + 1])
                    banned_links.add(link.link_id)
            banned_nodes = frozenset(root[:-1])
            spur = _dijkstra(topology, metric, spur_node, dst, weight_overrides,
                             banned_nodes=banned_nodes,
                             banned_links=frozenset(banned_links))
            if spur is None:
                continue
            total = root[:-1] + spur
            entry = (weigh(total), total)
            if total not in accepted and entry not in candidates:
                heapq.heappush(candidates, entry)
        if not candidates:
            break
        _, best = heapq.heappop(candidates)
        accepted.append(best)
    return [_links_for(topology, seq) for seq in accepted]


# --- channel bookkeeping -----------------------------------------------------


@dataclass(frozen=True)
class QuantumPath:
    links: tuple[Link, ...]
    total_loss_db: float
    assigned_channel: WavelengthChannel

    @property
    def link_ids(self) -> tuple[LinkId, ...]:
        return tuple(link.link_id for link in self.links)


@dataclass(frozen=True)
class PairAssignment:
    """One session's two routed arms plus its conjugate channel pair."""

    session_id: str
    eps: str
    path_1: QuantumPath
    path_2: QuantumPath
    signal_ch: WavelengthChannel
    idler_ch: WavelengthChannel


@dataclass(frozen=True)
class Blocked:
    """Assignment failure with a cause the controller can act on."""

    cause: str  # no_path | no_channel | coexistence

    def __bool__(self) -> bool:
        return False


class ChannelLedger:
    """Occupancy of source channels and per-link wavelengths.

    A channel is held by at most one active session on its source, and a
    wavelength is held by at most one session on any given link. Mutations
    happen only through :func:`assign_pair` / :func:`release_assignment`,
    each of which commits atomically.
    """

    def __init__(self):
        self.eps_channels: dict[str, dict[str, str]] = {}      # eps -> label -> session
        self.link_channels: dict[LinkId, dict[str, str]] = {}  # link -> label -> session
        self.assignments: dict[str, PairAssignment] = {}

    def eps_in_use(self, eps: str) -> dict[str, str]:
        return self.eps_channels.setdefault(eps, {})

    def link_in_use(self, link_id: LinkId) -> dict[str, str]:
        return self.link_channels.setdefault(link_id, {})

    def channel_free(self, eps: str, channel: WavelengthChannel,
                     links: Sequence[Link]) -> bool:
        if channel.label in self.eps_in_use(eps):
            return False
        return all(channel.label not in self.link_in_use(link.link_id) for link in links)

    def active_count(self, eps: str) -> int:
        return len({s for s in self.eps_in_use(eps).values()})

    def commit(self, assignment: PairAssignment) -> None:
        session = assignment.session_id
        if session in self.assignments:
            raise LedgerError(f"session {session} already holds an assignment")
        self.eps_in_use(assignment.eps)[assignment.signal_ch.label] = session
        self.eps_in_use(assignment.eps)[assignment.idler_ch.label] = session
        for link in assignment.path_1.links:
            self.link_in_use(link.link_id)[assignment.signal_ch.label] = session
        for link in assignment.path_2.links:
            self.link_in_use(link.link_id)[assignment.idler_ch.label] = session
        self.assignments[session] = assignment

    def snapshot(self) -> tuple:
        """Canonical value of the ledger, for equality checks."""
        eps = tuple(sorted((e, tuple(sorted(chs.items())))
                           for e, chs in self.eps_channels.items() if chs))
        links = tuple(sorted((l, tuple(sorted(chs.items())))
                             for l, chs in self.link_channels.items() if chs))
        return (eps, links, tuple(sorted(self.assignments)))

    def check_consistency(self) -> None:
        """Every in-use channel belongs to exactly one recorded assignment,
        and every assignment's channels are recorded. Raises on violation."""
        expected_eps: dict[str, dict[str, str]] = {}
        expected_links: dict[LinkId, dict[str, str]] = {}
        for session, a in self.assignments.items():
            eps_map = expected_eps.setdefault(a.eps, {})
            for label in (a.signal_ch.label, a.idler_ch.label):
                if label in eps_map:
                    raise LedgerError(f"channel {label} on {a.eps} held twice")
                eps_map[label] = session
            for link in a.path_1.links:
                expected_links.setdefault(link.link_id, {})[a.signal_ch.label] = session
            for link in a.path_2.links:
                expected_links.setdefault(link.link_id, {})[a.idler_ch.label] = session
        actual_eps = {e: chs for e, chs in self.eps_channels.items() if chs}
        actual_links = {l: chs for l, chs in self.link_channels.items() if chs}
        if actual_eps != expected_eps or actual_links != expected_links:
            raise LedgerError("ledger does not match the active assignment set")


def assign_pair(topology: Topology, ledger: ChannelLedger, eps: str,
                qnode_1: str, qnode_2: str, metric: RouteMetric, *,
                session_id: str = "anon",
                k: int = 8,
                weight_overrides: Optional[WeightOverrides] = None,
                path_filter: Optional[PathFilter] = None):
    """Route both arms and assign the first free conjugate channel pair.

    Arm paths come from the k-shortest lists, combos tried in ascending
    combined-weight order; for each combo the lowest-index conjugate pair
    whose signal is free along arm 1 and idler along arm 2 (and which passes
    coexistence validation) wins. Returns a :class:`PairAssignment` and
    commits it, or a :class:`Blocked` leaving the ledger untouched.
    """
    eps_node = topology.node(eps)
    if eps_node.kind is not NodeKind.EPS:
        raise LedgerError(f"{eps} is not a pair source")
    if qnode_1 == qnode_2:
        raise LedgerError("the two q-nodes must be distinct")
    info = eps_node.info

    def usable(paths: list[list[Link]]) -> list[list[Link]]:
        if path_filter is None:
            return paths
        return [path for path in paths if path_filter(tuple(walk_nodes(topology, path)))]

    paths_1 = usable(k_shortest_paths(topology, metric, eps, qnode_1, k, weight_overrides))
    paths_2 = usable(k_shortest_paths(topology, metric, eps, qnode_2, k, weight_overrides))
    if not paths_1 or not paths_2:
        return Blocked("no_path")

    # Combos are ranked by the routing metric (override-aware); the stored
    # per-path loss stays the physical baseline figure.
    losses_1 = [path_loss_db(topology, p, metric.include_pdl) for p in paths_1]
    losses_2 = [path_loss_db(topology, p, metric.include_pdl) for p in paths_2]
    rank_1 = [path_weight(topology, walk_nodes(topology, p), metric, weight_overrides)
              for p in paths_1]
    rank_2 = [path_weight(topology, walk_nodes(topology, p), metric, weight_overrides)
              for p in paths_2]
    combos = sorted(itertools.product(range(len(paths_1)), range(len(paths_2))),
                    key=lambda ij: (rank_1[ij[0]] + rank_2[ij[1]], ij[0], ij[1]))

    first_combo_cause: Optional[str] = None
    for i, j in combos:
        arm_1, arm_2 = paths_1[i], paths_2[j]
        saw_coexistence = False
        for pair_index in range(1, info.capacity + 1):
            signal, idler = info.conjugate_pair(pair_index)
            if not (ledger.channel_free(eps, signal, arm_1)
                    and ledger.channel_free(eps, idler, arm_2)):
                continue
            if metric.forbid_coexistence_violations:
                bad = (any(not validate_coexistence(topology, signal, l).ok for l in arm_1)
                       or any(not validate_coexistence(topology, idler, l).ok for l in arm_2))
                if bad:
                    saw_coexistence = True
                    continue
            assignment = PairAssignment(
                session_id=session_id, eps=eps,
                path_1=QuantumPath(tuple(arm_1), losses_1[i], signal),
                path_2=QuantumPath(tuple(arm_2), losses_2[j], idler),
                signal_ch=signal, idler_ch=idler)
            ledger.commit(assignment)
            return assignment
        if first_combo_cause is None:
            first_combo_cause = "coexistence" if saw_coexistence else "no_channel"
    return Blocked(first_combo_cause or "no_channel")


def release_assignment(ledger: ChannelLedger, assignment: PairAssignment) -> None:
    """Free both channels on the source and on every arm link.

    Releasing an assignment that is not active raises :class:`LedgerError`.
    """
    session = assignment.session_id
    if ledger.assignments.get(session) is not assignment:
        raise LedgerError(f"assignment for session {session} is not active")
    del ledger.assignments[session]
    for label in (assignment.signal_ch.label, assignment.idler_ch.label):
        ledger.eps_in_use(assignment.eps).pop(label, None)
    for link in assignment.path_1.links:
        ledger.link_in_use(link.link_id).pop(assignment.signal_ch.label, None)
    for link in assignment.path_2.links:
        ledger.link_in_use(link.link_id).pop(assignment.idler_ch.label, None)
