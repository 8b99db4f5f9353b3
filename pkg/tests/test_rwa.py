import random

import pytest

from entdist.exceptions import LedgerError, UnreachableError
from entdist.rwa import (Blocked, ChannelLedger, RouteMetric, assign_pair,
                         k_shortest_paths, release_assignment, shortest_path)
from entdist.topology import Link, Topology, walk_nodes
from util import (assignment_oracle, brute_force_shortest, brute_force_top_k,
                  eps_node, oracle_path_weight, qnode, random_session_graph,
                  random_switch_graph, switch_node)

METRIC = RouteMetric()


def chain_topology() -> Topology:
    nodes = {n.node_id: n for n in (switch_node("a"), switch_node("b"), switch_node("c"))}
    links = (Link("a", "b", 1.0, 1.0, 0.0), Link("b", "c", 1.0, 1.0, 0.0))
    return Topology(nodes=nodes, links=links)


def triangle_topology() -> Topology:
    nodes = {n.node_id: n for n in (switch_node("a"), switch_node("b"), switch_node("c"))}
    links = (Link("a", "b", 1.0, 1.0, 0.0), Link("b", "c", 1.0, 1.0, 0.0),
             Link("a", "c", 1.0, 3.0, 0.0))
    return Topology(nodes=nodes, links=links)


def test_chain_has_unique_path():
    path = shortest_path(chain_topology(), METRIC, "a", "c")
    assert [l.link_id for l in path] == [("a", "b"), ("b", "c")]


def test_triangle_prefers_two_hop_over_heavy_direct():
    path = shortest_path(triangle_topology(), METRIC, "a", "c")
    assert len(path) == 2
    assert sum(l.weight_db() for l in path) == pytest.approx(2.0)


def test_unreachable_raises():
    topo = Topology(nodes={"a": switch_node("a"), "b": switch_node("b")}, links=())
    with pytest.raises(UnreachableError):
        shortest_path(topo, METRIC, "a", "b")
    with pytest.raises(UnreachableError):
        shortest_path(topo, METRIC, "a", "a")


def test_shortest_path_matches_brute_force_on_random_graphs():
    hits = 0
    for seed in range(100):
        rng = random.Random(seed)
        topo = random_switch_graph(rng, 8)
        oracle = brute_force_shortest(topo, "n0", "n7")
        try:
            path = shortest_path(topo, METRIC, "n0", "n7")
        except UnreachableError:
            assert oracle is None
            continue
        hits += 1
        weight = oracle_path_weight(topo, tuple(walk_nodes(topo, path)))
        assert weight == oracle[0]  # dyadic weights: exact equality
    assert hits > 50  # p=0.45 graphs are usually connected


def test_shortest_path_lexicographic_tie_break():
    # two equal-weight routes: a-b-d and a-c-d; the b route sorts first
    nodes = {n: switch_node(n) for n in "abcd"}
    links = (Link("a", "b", 1.0, 1.0, 0.0), Link("b", "d", 1.0, 1.0, 0.0),
             Link("a", "c", 1.0, 1.0, 0.0), Link("c", "d", 1.0, 1.0, 0.0))
    topo = Topology(nodes=nodes, links=links)
    path = walk_nodes(topo, shortest_path(topo, METRIC, "a", "d"))
    assert path == ["a", "b", "d"]


def test_k_shortest_on_chain_returns_single_path():
    paths = k_shortest_paths(chain_topology(), METRIC, "a", "c", k=3)
    assert len(paths) == 1


def test_k_shortest_on_triangle_ascending():
    paths = k_shortest_paths(triangle_topology(), METRIC, "a", "c", k=2)
    assert len(paths) == 2
    weights = [sum(l.weight_db() for l in p) for p in paths]
    assert weights == sorted(weights)
    assert len(paths[0]) == 2 and len(paths[1]) == 1


def test_k_shortest_matches_brute_force_top_k():
    for seed in range(40):
        rng = random.Random(1000 + seed)
        topo = random_switch_graph(rng, 7)
        oracle = brute_force_top_k(topo, "n0", "n6", 4)
        paths = k_shortest_paths(topo, METRIC, "n0", "n6", k=4)
        assert len(paths) == len(oracle)
        for path, (want_weight, _) in zip(paths, oracle):
            got = oracle_path_weight(topo, tuple(walk_nodes(topo, path)))
            assert got == want_weight


def test_k_shortest_first_equals_shortest():
    for seed in range(20):
        rng = random.Random(7000 + seed)
        topo = random_switch_graph(rng, 6)
        try:
            single = shortest_path(topo, METRIC, "n0", "n5")
        except UnreachableError:
            assert k_shortest_paths(topo, METRIC, "n0", "n5", k=3) == []
            continue
        many = k_shortest_paths(topo, METRIC, "n0", "n5", k=3)
        assert [l.link_id for l in many[0]] == [l.link_id for l in single]


def star_plant() -> Topology:
    nodes = {"eps": eps_node("eps"), "sw": switch_node("sw", il_db=1.0)}
    for i in range(1, 11):
        nodes[f"q{i}"] = qnode(f"q{i}", f"10.8.0.{i}")
    links = [Link("eps", "sw", 0.5, 0.5, 0.0)]
    links += [Link(f"q{i}", "sw", 1.0, 0.5, 0.0) for i in range(1, 11)]
    return Topology(nodes=nodes, links=tuple(links))


def test_first_fit_assigns_outermost_conjugate_pair():
    topo = star_plant()
    ledger = ChannelLedger()
    assignment = assign_pair(topo, ledger, "eps", "q1", "q2", METRIC, session_id="s1")
    grid = topo.nodes["eps"].info.channel_grid
    assert assignment.signal_ch == grid[0]
    assert assignment.idler_ch == grid[-1]


def test_capacity_is_half_the_wavelength_count():
    topo = star_plant()
    ledger = ChannelLedger()
    for i in range(4):
        out = assign_pair(topo, ledger, "eps", f"q{2 * i + 1}", f"q{2 * i + 2}",
                          METRIC, session_id=f"s{i}")
        assert not isinstance(out, Blocked)
    fifth = assign_pair(topo, ledger, "eps", "q9", "q10", METRIC, session_id="s5")
    assert isinstance(fifth, Blocked)
    assert fifth.cause == "no_channel"


def test_conjugacy_invariant():
    topo = star_plant()
    info = topo.nodes["eps"].info
    ledger = ChannelLedger()
    for i in range(4):
        a = assign_pair(topo, ledger, "eps", f"q{2 * i + 1}", f"q{2 * i + 2}",
                        METRIC, session_id=f"s{i}")
        sig_index = info.channel_grid.index(a.signal_ch) + 1
        idl_index = info.channel_grid.index(a.idler_ch) + 1
        assert idl_index == info.num_wavelengths + 1 - sig_index


def test_release_restores_initial_ledger():
    topo = star_plant()
    ledger = ChannelLedger()
    before = ledger.snapshot()
    assignment = assign_pair(topo, ledger, "eps", "q1", "q2", METRIC, session_id="s1")
    assert ledger.snapshot() != before
    release_assignment(ledger, assignment)
    assert ledger.snapshot() == before


def test_double_release_is_an_error():
    topo = star_plant()
    ledger = ChannelLedger()
    assignment = assign_pair(topo, ledger, "eps", "q1", "q2", METRIC, session_id="s1")
    release_assignment(ledger, assignment)
    with pytest.raises(LedgerError):
        release_assignment(ledger, assignment)


def test_blocked_assignment_leaves_ledger_untouched():
    topo = star_plant()
    ledger = ChannelLedger()
    for i in range(4):
        assign_pair(topo, ledger, "eps", f"q{2 * i + 1}", f"q{2 * i + 2}",
                    METRIC, session_id=f"s{i}")
    before = ledger.snapshot()
    out = assign_pair(topo, ledger, "eps", "q9", "q10", METRIC, session_id="s5")
    assert isinstance(out, Blocked)
    assert ledger.snapshot() == before


def test_assignment_determinism():
    results = []
    for _ in range(2):
        topo = star_plant()
        ledger = ChannelLedger()
        a = assign_pair(topo, ledger, "eps", "q3", "q7", METRIC, session_id="s")
        results.append((a.signal_ch.label, a.idler_ch.label,
                        a.path_1.link_ids, a.path_2.link_ids))
    assert results[0] == results[1]


def coexistence_plant(band: str) -> Topology:
    from entdist.topology import parse_channel
    nodes = {"eps": eps_node("eps", band=band), "sw": switch_node("sw", il_db=1.0),
             "q1": qnode("q1", "10.7.0.1"), "q2": qnode("q2", "10.7.0.2")}
    links = (Link("eps", "sw", 0.5, 0.5, 0.0,
                  classical_channels=(parse_channel("C40"),)),
             Link("q1", "sw", 1.0, 0.5, 0.0),
             Link("q2", "sw", 1.0, 0.5, 0.0))
    return Topology(nodes=nodes, links=links)


def test_coexistence_blocks_c_band_over_classical():
    ledger = ChannelLedger()
    out = assign_pair(coexistence_plant("C"), ledger, "eps", "q1", "q2",
                      METRIC, session_id="s")
    assert isinstance(out, Blocked)
    assert out.cause == "coexistence"


def test_coexistence_allows_o_band_over_classical():
    ledger = ChannelLedger()
    out = assign_pair(coexistence_plant("O"), ledger, "eps", "q1", "q2",
                      METRIC, session_id="s")
    assert not isinstance(out, Blocked)


def test_path_filter_pushes_to_second_shortest():
    # diamond: eps - swa - (swb | swc) - swd - q; swb route is shorter but
    # filtered out (its ports are spoken for)
    nodes = {"eps": eps_node("eps"), "q1": qnode("q1", "10.6.0.1"),
             "q2": qnode("q2", "10.6.0.2")}
    for s in ("swa", "swb", "swc", "swd"):
        nodes[s] = switch_node(s, il_db=0.5)
    links = (Link("eps", "swa", 0.5, 0.5, 0.0),
             Link("swa", "swb", 1.0, 1.0, 0.0), Link("swb", "swd", 1.0, 1.0, 0.0),
             Link("swa", "swc", 1.0, 2.0, 0.0), Link("swc", "swd", 1.0, 2.0, 0.0),
             Link("q1", "swd", 1.0, 0.5, 0.0), Link("q2", "swa", 1.0, 0.5, 0.0))
    topo = Topology(nodes=nodes, links=links)

    ledger = ChannelLedger()
    unfiltered = assign_pair(topo, ledger, "eps", "q1", "q2", METRIC, session_id="a")
    assert "swb" in walk_nodes(topo, unfiltered.path_1.links)

    ledger = ChannelLedger()
    filtered = assign_pair(topo, ledger, "eps", "q1", "q2", METRIC, session_id="b",
                           path_filter=lambda seq: "swb" not in seq)
    assert not isinstance(filtered, Blocked)
    assert "swc" in walk_nodes(topo, filtered.path_1.links)


def test_ledger_consistency_under_interleaved_ops():
    # model check against a reference multiset of held channels
    rng = random.Random(17)
    topo = star_plant()
    ledger = ChannelLedger()
    active = {}
    reference = set()
    for step in range(300):
        if active and rng.random() < 0.45:
            sid = rng.choice(sorted(active))
            assignment = active.pop(sid)
            release_assignment(ledger, assignment)
            reference -= {(assignment.eps, assignment.signal_ch.label),
                          (assignment.eps, assignment.idler_ch.label)}
        else:
            sid = f"s{step}"
            q = rng.sample(range(1, 11), 2)
            out = assign_pair(topo, ledger, "eps", f"q{q[0]}", f"q{q[1]}",
                              METRIC, session_id=sid)
            if not isinstance(out, Blocked):
                active[sid] = out
                reference |= {(out.eps, out.signal_ch.label),
                              (out.eps, out.idler_ch.label)}
        ledger.check_consistency()
        held = {(eps, label) for eps, chans in ledger.eps_channels.items()
                for label in chans}
        assert held == reference
        assert len(active) <= 4


def test_assignment_agrees_with_exhaustive_oracle():
    agreements = 0
    for seed in range(60):
        rng = random.Random(400 + seed)
        topo = random_session_graph(rng)
        qnames = sorted(n for n in topo.nodes if n.startswith("q"))
        q1, q2 = qnames[0], qnames[1]
        ledger = ChannelLedger()
        feasible = assignment_oracle(topo, ledger, "eps", q1, q2, METRIC)
        out = assign_pair(topo, ledger, "eps", q1, q2, METRIC,
                          session_id="s", k=64)
        if feasible:
            assert not isinstance(out, Blocked), f"seed {seed}: oracle found a plan"
            agreements += 1
        else:
            assert isinstance(out, Blocked), f"seed {seed}: oracle found nothing"
    assert agreements > 10
