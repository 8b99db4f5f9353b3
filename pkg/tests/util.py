"""Shared test helpers: fixture loading, random graph generation, and the
brute-force oracles the routing and assignment tests check against."""

from __future__ import annotations

import itertools
import random
from pathlib import Path

from entdist.rwa import ChannelLedger, RouteMetric
from entdist.topology import (Band, EpsInfo, Link, Node, NodeKind, QNodeInfo,
                              QubitEncoding, SwitchInfo, Topology, load_topology,
                              parse_channel, validate_coexistence)
from entdist.photonics import DetectorModel

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


def load_fixture(name: str) -> Topology:
    return load_topology(fixture_text(name))


def switch_node(node_id: str, il_db: float = 0.0, ports: int = 32) -> Node:
    return Node(node_id, NodeKind.SWITCH, SwitchInfo(port_count=ports,
                                                     insertion_loss_db=il_db))


def qnode(node_id: str, ip: str) -> Node:
    info = QNodeInfo(ip=ip, quantum_channels=(0, 1),
                     detectors=DetectorModel(efficiency=1.0, dark_rate_hz=100.0),
                     supported_encodings=frozenset({QubitEncoding.POLARIZATION}))
    return Node(node_id, NodeKind.QNODE, info)


def eps_node(node_id: str, band: str = "C", rate: float = 1e6) -> Node:
    grid = ("C28,C29,C30,C31,C33,C34,C35,C36" if band == "C"
            else "O60,O61,O62,O63,O64,O65,O66,O67")
    info = EpsInfo(pair_rate=rate, num_wavelengths=8,
                   channel_grid=tuple(parse_channel(c) for c in grid.split(",")),
                   band=Band(band))
    return Node(node_id, NodeKind.EPS, info)


def random_switch_graph(rng: random.Random, n_nodes: int, p_edge: float = 0.45
                        ) -> Topology:
    """Random weighted graph of zero-loss switches; weights are dyadic
    rationals so path sums are exact in floating point regardless of
    association order."""
    nodes = {f"n{i}": switch_node(f"n{i}") for i in range(n_nodes)}
    links = []
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < p_edge:
            weight = rng.randrange(1, 64) * 0.25
            links.append(Link(endpoint_a=f"n{i}", endpoint_b=f"n{j}",
                              length_km=1.0, fiber_loss_db=weight,
                              insertion_loss_db=0.0))
    return Topology(nodes=nodes, links=links and tuple(links) or ())


def all_simple_paths(topology: Topology, src: str, dst: str) -> list[tuple[str, ...]]:
    """Exhaustive DFS enumeration of loopless node sequences."""
    paths = []

    def extend(seq: list[str]) -> None:
        here = seq[-1]
        if here == dst:
            paths.append(tuple(seq))
            return
        for link in topology.incident_links(here):
            there = link.other_end(here)
            if there not in seq:
                seq.append(there)
                extend(seq)
                seq.pop()

    extend([src])
    return paths


def oracle_path_weight(topology: Topology, seq: tuple[str, ...],
                       include_pdl: bool = False) -> float:
    """Independent weight computation: direct sums over the node sequence."""
    total = 0.0
    for a, b in zip(seq, seq[1:]):
        link = topology.link_between(a, b)
        total += link.fiber_loss_db + link.insertion_loss_db
        if include_pdl:
            total += link.pdl_db
    for node_id in seq[1:-1]:
        node = topology.nodes[node_id]
        if node.kind is NodeKind.SWITCH:
            total += node.info.insertion_loss_db
    return total


def brute_force_shortest(topology: Topology, src: str, dst: str):
    """(weight, node sequence) of the true minimum, ties by smallest
    sequence; None when unreachable."""
    best = None
    for seq in all_simple_paths(topology, src, dst):
        entry = (oracle_path_weight(topology, seq), seq)
        if best is None or entry < best:
            best = entry
    return best


def brute_force_top_k(topology: Topology, src: str, dst: str, k: int):
    ranked = sorted((oracle_path_weight(topology, seq), seq)
                    for seq in all_simple_paths(topology, src, dst))
    return ranked[:k]


def links_for_seq(topology: Topology, seq: tuple[str, ...]) -> list[Link]:
    return [topology.link_between(a, b) for a, b in zip(seq, seq[1:])]


def assignment_oracle(topology: Topology, ledger: ChannelLedger, eps: str,
                      q1: str, q2: str, metric: RouteMetric) -> bool:
    """Exhaustive feasibility: does ANY (arm-1 path, arm-2 path, conjugate
    pair) combination satisfy channel availability and coexistence?"""
    info = topology.nodes[eps].info
    paths_1 = all_simple_paths(topology, eps, q1)
    paths_2 = all_simple_paths(topology, eps, q2)
    for seq_1, seq_2 in itertools.product(paths_1, paths_2):
        arm_1, arm_2 = links_for_seq(topology, seq_1), links_for_seq(topology, seq_2)
        for pair_index in range(1, info.capacity + 1):
            signal, idler = info.conjugate_pair(pair_index)
            if not (ledger.channel_free(eps, signal, arm_1)
                    and ledger.channel_free(eps, idler, arm_2)):
                continue
            if metric.forbid_coexistence_violations:
                if any(not validate_coexistence(topology, signal, l).ok for l in arm_1):
                    continue
                if any(not validate_coexistence(topology, idler, l).ok for l in arm_2):
                    continue
            return True
    return False


def random_session_graph(rng: random.Random):
    """Small plant for assignment-oracle comparisons: one source, a few
    switches, several receivers, random classical channels on some links."""
    n_switches = rng.randrange(1, 4)
    n_qnodes = rng.randrange(2, 4)
    nodes = {"eps": eps_node("eps", band=rng.choice(["C", "O"]))}
    for i in range(n_switches):
        nodes[f"sw{i}"] = switch_node(f"sw{i}", il_db=rng.randrange(0, 5) * 0.25)
    for i in range(n_qnodes):
        nodes[f"q{i}"] = qnode(f"q{i}", f"10.9.0.{i + 1}")
    links = []

    def add_link(a: str, b: str) -> None:
        classical = ()
        if rng.random() < 0.3:
            classical = (parse_channel("C40"),)
        links.append(Link(endpoint_a=a, endpoint_b=b, length_km=1.0,
                          fiber_loss_db=rng.randrange(1, 32) * 0.25,
                          insertion_loss_db=0.0, classical_channels=classical))

    add_link("eps", "sw0")
    for i in range(1, n_switches):
        add_link(f"sw{rng.randrange(0, i)}", f"sw{i}")
    for i in range(n_qnodes):
        add_link(f"q{i}", f"sw{rng.randrange(0, n_switches)}")
    for i, j in itertools.combinations(range(n_switches), 2):
        if rng.random() < 0.4 and not any(
                {l.endpoint_a, l.endpoint_b} == {f"sw{i}", f"sw{j}"} for l in links):
            add_link(f"sw{i}", f"sw{j}")
    return Topology(nodes=nodes, links=tuple(links))
