"""Centralized controller and the per-entity agents it supervises.

The controller discovers the topology from switch agents, admits requests,
invokes routing and wavelength assignment, programs cross-connects, drives
each session through the protocol state machine, monitors link losses, and
stores results. Q-node and pair-source agents live here too; they interact
with the controller and each other only through kernel messages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import protocol, rwa
from .exceptions import (CalibrationError, ResultStoreError, UnreachableError,
                         VerificationError)
from .photonics import DelayScanModel, sample_counts, transmittance_from_loss
from .protocol import (Emit, EntanglementRequest, MsgKind, Phase,
                       ROLE_CONTROLLER, ROLE_EPS, ROLE_QNODE_1, ROLE_QNODE_2,
                       RetryPolicy, SessionContext, SessionEvent, SessionState,
                       SIG_PROCEED, SIG_REJECT, SIG_ROUTE, SIG_ROUTE_BLOCKED,
                       SIG_ROUTE_OK, SIG_SEND_LATE, SIG_TIMEOUT, step_state)
from .scenario import ScenarioEvent
from .simkernel import (Agent, CTL_MONITOR_QUERY, CTL_MONITOR_REPORT,
                        CTL_PORT_QUERY, CTL_PORT_REPORT, CTL_PROGRAM,
                        CTL_UNPROGRAM, Kernel, Message, MetricsReport,
                        SessionSummary, SimConfig)
from .topology import (Band, DetectorModel as _Det, EpsInfo, Link, LinkId, Node,
                       NodeKind, QNodeInfo, QubitEncoding, SwitchInfo, Topology,
                       parse_channel, walk_nodes)

RESOURCE_CAUSES = frozenset({"no_eps", "no_path", "no_channel", "coexistence"})


# --- discovery wire format ----------------------------------------------------


def _link_to_dict(link: Link) -> dict:
    return {
        "a": link.endpoint_a, "b": link.endpoint_b, "len_km": link.length_km,
        "fiber_db": link.fiber_loss_db, "il_db": link.insertion_loss_db,
        "pdl_db": link.pdl_db,
        "classical": [ch.label for ch in link.classical_channels],
    }


def _link_from_dict(d: dict) -> Link:
    return Link(endpoint_a=d["a"], endpoint_b=d["b"], length_km=d["len_km"],
                fiber_loss_db=d["fiber_db"], insertion_loss_db=d["il_db"],
                pdl_db=d["pdl_db"],
                classical_channels=tuple(parse_channel(c) for c in d["classical"]))


def _node_to_dict(node: Node) -> dict:
    if node.kind is NodeKind.QNODE:
        info = node.info
        det = info.detectors
        return {"id": node.node_id, "kind": "qnode", "ip": info.ip,
                "channels": len(info.quantum_channels),
                "encodings": sorted(e.value for e in info.supported_encodings),
                "eff": det.efficiency, "dark_hz": det.dark_rate_hz,
                "bin_s": det.time_bin_width_s}
    if node.kind is NodeKind.EPS:
        info = node.info
        return {"id": node.node_id, "kind": "eps", "rate": info.pair_rate,
                "n": info.num_wavelengths, "band": info.band.value,
                "grid": [ch.label for ch in info.channel_grid]}
    info = node.info
    return {"id": node.node_id, "kind": "switch", "ports": info.port_count,
            "il_db": info.insertion_loss_db}


def _node_from_dict(d: dict) -> Node:
    if d["kind"] == "qnode":
        info = QNodeInfo(
            ip=d["ip"], quantum_channels=tuple(range(d["channels"])),
            detectors=_Det(efficiency=d["eff"], dark_rate_hz=d["dark_hz"],
                           time_bin_width_s=d["bin_s"]),
            supported_encodings=frozenset(QubitEncoding(e) for e in d["encodings"]))
        return Node(d["id"], NodeKind.QNODE, info)
    if d["kind"] == "eps":
        info = EpsInfo(pair_rate=d["rate"], num_wavelengths=d["n"],
                       channel_grid=tuple(parse_channel(c) for c in d["grid"]),
                       band=Band(d["band"]))
        return Node(d["id"], NodeKind.EPS, info)
    return Node(d["id"], NodeKind.SWITCH,
                SwitchInfo(port_count=d["ports"], insertion_loss_db=d["il_db"]))


# --- switch port bookkeeping --------------------------------------------------


class SwitchPortModel:
    """Controller-side port accounting for one MxM switch. Cross-connects
    form a partial matching: each port belongs to at most one connect."""

    def __init__(self, port_count: int):
        self.port_count = port_count
        self.used: dict[int, str] = {}       # port -> session
        self.reserved: set[int] = set()

    def free_ports(self) -> int:
        return self.port_count - len(self.used) - len(self.reserved)

    def allocate(self, session: str) -> Optional[int]:
        for port in range(self.port_count):
            if port not in self.used and port not in self.reserved:
                self.used[port] = session
                return port
        return None

    def release_session(self, session: str) -> None:
        self.used = {p: s for p, s in self.used.items() if s != session}


class ResultStore:
    """Append-only session results; a session id can be written once."""

    def __init__(self):
        self.records: dict[str, dict] = {}

    def put(self, session_id: str, record: dict) -> None:
        if session_id in self.records:
            raise ResultStoreError(f"results for {session_id} already stored")
        self.records[session_id] = record

    def get(self, session_id: str) -> dict:
        return self.records[session_id]


@dataclass
class SessionRecord:
    session_id: str
    request: EntanglementRequest
    state: SessionState
    admitted_time: float
    eps_id: str = ""
    assignment: Optional[rwa.PairAssignment] = None
    assigned_at: float = 0.0
    predicted_loss: dict[int, float] = field(default_factory=dict)
    verify_ctx: SessionContext = None
    avoid_links: set[LinkId] = field(default_factory=set)
    timer_epoch: int = 0
    terminal_time: Optional[float] = None
    ebits: int = 0
    recalibrations: int = 0
    was_admitted: bool = False  # passed admission (entered Routing)

    @property
    def role_nodes(self) -> dict[str, str]:
        return {ROLE_QNODE_1: self.request.qnode_1,
                ROLE_QNODE_2: self.request.qnode_2,
                ROLE_EPS: self.eps_id}

    def role_of(self, node_id: str) -> str:
        for role, node in self.role_nodes.items():
            if node == node_id:
                return role
        return ""


class ControllerAgent(Agent):

    def __init__(self, agent_id: str, config: SimConfig, switch_ids: Sequence[str]):
        super().__init__(agent_id)
        self.config = config
        self.policy = RetryPolicy(max_retries=config.max_retries)
        self.metric = rwa.RouteMetric()
        self.switch_ids = sorted(switch_ids)
        self.topology: Optional[Topology] = None
        self.ledger = rwa.ChannelLedger()
        self.sessions: dict[str, SessionRecord] = {}
        self.results = ResultStore()
        self.ports: dict[str, SwitchPortModel] = {}
        self.link_baseline: dict[LinkId, float] = {}
        self.link_current: dict[LinkId, float] = {}
        self.degraded_links: set[LinkId] = set()
        self.down_links: set[LinkId] = set()
        self.down_switches: set[str] = set()
        self._monitor_pending: set[str] = set()
        self.eps_committed: dict[str, int] = {}
        self.link_busy_s: dict[LinkId, float] = {}
        self._session_counter = 0
        self._discovery_pending: set[str] = set()
        self._discovered_nodes: dict[str, dict] = {}
        self._discovered_links: dict[LinkId, dict] = {}
        self.discovery_done = False
        self._queued_requests: list[Message] = []

    # -- discovery -------------------------------------------------------------

    def start_discovery(self, kernel: Kernel) -> None:
        if not self.switch_ids:
            # Degenerate plant with no switches: nothing to ask.
            self._finalize_discovery(kernel)
            return
        self._discovery_pending = set(self.switch_ids)
        for switch in self.switch_ids:
            kernel.send(CTL_PORT_QUERY, self.agent_id, switch)
        kernel.set_timer(self.config.timeout_s, self.agent_id, "discovery_timeout")

    def _on_port_report(self, kernel: Kernel, msg: Message) -> None:
        if msg.sender not in self._discovery_pending:
            return
        self._discovery_pending.discard(msg.sender)
        report = msg.data
        self._discovered_nodes[msg.sender] = report["node"]
        for node_dict in report["neighbors"]:
            self._discovered_nodes.setdefault(node_dict["id"], node_dict)
        for link_dict in report["links"]:
            link_id = tuple(sorted((link_dict["a"], link_dict["b"])))
            self._discovered_links.setdefault(link_id, link_dict)
        if not self._discovery_pending:
            self._finalize_discovery(kernel)

    def _finalize_discovery(self, kernel: Kernel) -> None:
        if self.discovery_done:
            return
        nodes = {nid: _node_from_dict(d) for nid, d in self._discovered_nodes.items()}
        links = tuple(_link_from_dict(d) for _, d in sorted(self._discovered_links.items()))
        if not nodes:
            # No switches to ask: fall back to the ground-truth document the
            # simulation was built from (single-LAN bench setups).
            self.topology = kernel.topology
        else:
            self.topology = Topology(nodes=nodes, links=links)
        for node in self.topology.nodes_of_kind(NodeKind.SWITCH):
            self.ports[node.node_id] = SwitchPortModel(node.info.port_count)
        for link in self.topology.links:
            self.link_baseline[link.link_id] = link.weight_db()
            self.link_current[link.link_id] = link.weight_db()
        # Links whose reporting switch never answered are unusable for routing.
        for switch in self._discovery_pending:
            for link in kernel.topology.incident_links(switch) if switch in kernel.topology.nodes else []:
                self.down_links.add(link.link_id)
        self.discovery_done = True
        queued, self._queued_requests = self._queued_requests, []
        for msg in queued:
            self._admit(kernel, msg)

    # -- monitoring --------------------------------------------------------------

    def _monitor_tick(self, kernel: Kernel) -> None:
        # A switch that never answered the previous round is unreachable:
        # its links drop out of routing until it reports again.
        self.down_switches |= self._monitor_pending
        self._monitor_pending = set(self.switch_ids)
        for switch in self.switch_ids:
            kernel.send(CTL_MONITOR_QUERY, self.agent_id, switch)
        kernel.set_timer(self.config.monitor_interval_s, self.agent_id, "monitor")

    def _on_monitor_report(self, kernel: Kernel, msg: Message) -> None:
        self._monitor_pending.discard(msg.sender)
        self.down_switches.discard(msg.sender)
        for link_id, loss in msg.data.items():
            link_id = tuple(link_id)
            if link_id not in self.link_baseline:
                continue
            self.link_current[link_id] = loss
            if loss > self.link_baseline[link_id] + self.config.degraded_threshold_db:
                self.degraded_links.add(link_id)
            else:
                self.degraded_links.discard(link_id)

    def weight_overrides(self, record: Optional[SessionRecord] = None) -> dict[LinkId, float]:
        overrides = dict(self.link_current)
        for link_id in self.down_links:
            overrides[link_id] = math.inf
        for switch in self.down_switches:
            if self.topology is not None and switch in self.topology.nodes:
                for link in self.topology.incident_links(switch):
                    overrides[link.link_id] = math.inf
        if record is not None:
            for link_id in record.avoid_links:
                if math.isfinite(overrides.get(link_id, 0.0)):
                    overrides[link_id] = (overrides.get(link_id, 0.0)
                                          + self.config.avoid_penalty_db)
        return overrides

    # -- admission ---------------------------------------------------------------

    def _admit(self, kernel: Kernel, msg: Message) -> None:
        if not self.discovery_done:
            self._queued_requests.append(msg)
            return
        p = msg.payload
        request = EntanglementRequest(
            qubit_type=QubitEncoding(p["qubit"]), qnode_1=p["from"], qnode_2=p["to"],
            start_time=float(p["start"]), end_time=float(p["end"]),
            calib_basis=p["basis"], target_ebits=int(p["ebits"]))
        self._session_counter += 1
        sid = f"s{self._session_counter}"
        record = SessionRecord(session_id=sid, request=request,
                               state=SessionState(encoding=request.qubit_type),
                               admitted_time=kernel.now,
                               verify_ctx=SessionContext(
                                   session_id=sid, encoding=request.qubit_type,
                                   noise_threshold=self.config.noise_threshold,
                                   band_sigma=self.config.band_sigma,
                                   loss_sigma_db=self.config.classical_meas_sigma_db))
        self.sessions[sid] = record
        cause = request.validate() or self._admission_cause(request)
        if cause:
            self._apply_event(kernel, record, SessionEvent(SIG_REJECT, cause=cause))
            return
        record.eps_id = self._select_eps(request)
        if not record.eps_id:
            self._apply_event(kernel, record, SessionEvent(SIG_REJECT, cause="no_eps"))
            return
        self.eps_committed[record.eps_id] = self.eps_committed.get(record.eps_id, 0) + 1
        record.was_admitted = True
        at = max(kernel.now, request.start_time)
        kernel.schedule(at, self.agent_id, "timer", tag="session_signal",
                        data={"session": sid, "kind": SIG_ROUTE})
        self._arm_timeout(kernel, record)

    def _admission_cause(self, request: EntanglementRequest) -> str:
        for node_id in (request.qnode_1, request.qnode_2):
            if node_id not in self.topology.nodes:
                return "unknown_node"
            node = self.topology.nodes[node_id]
            if node.kind is not NodeKind.QNODE:
                return "invalid_pair"
            if request.qubit_type not in node.info.supported_encodings:
                return "unsupported_encoding"
        return ""

    def _select_eps(self, request: EntanglementRequest) -> str:
        """Pick the source minimizing the worse arm loss among those with a
        free conjugate pair; ties go to the smaller node id."""
        overrides = self.weight_overrides()
        best: Optional[tuple[float, str]] = None
        for node in sorted(self.topology.nodes_of_kind(NodeKind.EPS),
                           key=lambda n: n.node_id):
            committed = self.eps_committed.get(node.node_id, 0)
            if committed >= node.info.capacity:
                continue
            try:
                arm_1 = rwa.shortest_path(self.topology, self.metric, node.node_id,
                                          request.qnode_1, weight_overrides=overrides)
                arm_2 = rwa.shortest_path(self.topology, self.metric, node.node_id,
                                          request.qnode_2, weight_overrides=overrides)
            except UnreachableError:
                continue
            worst = max(rwa.path_weight(self.topology, walk_nodes(self.topology, arm_1),
                                        self.metric, overrides),
                        rwa.path_weight(self.topology, walk_nodes(self.topology, arm_2),
                                        self.metric, overrides))
            if best is None or (worst, node.node_id) < best:
                best = (worst, node.node_id)
        return best[1] if best else ""

    # -- establishment -----------------------------------------------------------

    def _port_filter(self, record: SessionRecord):
        def feasible(node_seq: tuple[str, ...]) -> bool:
            for node_id in node_seq[1:-1]:
                model = self.ports.get(node_id)
                if model is not None and model.free_ports() < 2:
                    return False
            return True
        return feasible

    def _establish(self, kernel: Kernel, record: SessionRecord) -> None:
        if record.state.phase is not Phase.ROUTING:
            return
        overrides = self.weight_overrides(record)
        result = rwa.assign_pair(
            self.topology, self.ledger, record.eps_id,
            record.request.qnode_1, record.request.qnode_2, self.metric,
            session_id=record.session_id, k=self.config.route_k,
            weight_overrides=overrides, path_filter=self._port_filter(record))
        if isinstance(result, rwa.Blocked):
            self._apply_event(kernel, record,
                              SessionEvent(SIG_ROUTE_BLOCKED, cause=result.cause))
            return
        record.assignment = result
        record.assigned_at = kernel.now
        if not self._program_switches(kernel, record):
            rwa.release_assignment(self.ledger, result)
            record.assignment = None
            self._apply_event(kernel, record,
                              SessionEvent(SIG_ROUTE_BLOCKED, cause="no_path"))
            return
        for arm, path in ((1, result.path_1), (2, result.path_2)):
            seq = walk_nodes(self.topology, path.links)
            record.predicted_loss[arm] = rwa.path_weight(
                self.topology, seq, self.metric, self.weight_overrides())
        record.verify_ctx.measured_loss_db.clear()
        self._apply_event(kernel, record, SessionEvent(SIG_ROUTE_OK))

    def _program_switches(self, kernel: Kernel, record: SessionRecord) -> bool:
        """Allocate ports for both arms and push the cross-connects out.
        On any shortfall every port taken so far is rolled back."""
        sid = record.session_id
        programs: dict[str, list[tuple[int, int]]] = {}
        for path in (record.assignment.path_1, record.assignment.path_2):
            seq = walk_nodes(self.topology, path.links)
            for node_id in seq[1:-1]:
                model = self.ports.get(node_id)
                if model is None:
                    continue
                port_in = model.allocate(sid)
                port_out = model.allocate(sid)
                if port_in is None or port_out is None:
                    for switch in self.ports.values():
                        switch.release_session(sid)
                    return False
                programs.setdefault(node_id, []).append((port_in, port_out))
        for switch_id, connects in sorted(programs.items()):
            kernel.send(CTL_PROGRAM, self.agent_id, switch_id, session=sid,
                        attempt=record.state.attempt,
                        payload={"connects": len(connects)}, data=connects)
        return True

    def _teardown_attempt(self, kernel: Kernel, record: SessionRecord) -> None:
        if record.assignment is not None:
            for path in (record.assignment.path_1, record.assignment.path_2):
                for link in path.links:
                    busy = self.link_busy_s.get(link.link_id, 0.0)
                    self.link_busy_s[link.link_id] = busy + (kernel.now - record.assigned_at)
            rwa.release_assignment(self.ledger, record.assignment)
            record.assignment = None
        for switch_id, model in sorted(self.ports.items()):
            if any(s == record.session_id for s in model.used.values()):
                model.release_session(record.session_id)
                kernel.send(CTL_UNPROGRAM, self.agent_id, switch_id,
                            session=record.session_id)

    # -- session supervision -------------------------------------------------------

    def _materialize(self, kernel: Kernel, record: SessionRecord,
                     emits: tuple[Emit, ...]) -> None:
        for emit in emits:
            if emit.kind == SIG_ROUTE:
                continue  # phase-entry hook handles re-routing
            if emit.kind == SIG_PROCEED:
                kernel.set_timer(0.0, self.agent_id, "session_signal",
                                 data={"session": record.session_id, "kind": SIG_PROCEED})
            elif emit.kind == SIG_SEND_LATE:
                kernel.set_timer(self.config.histogram_dwell_s, self.agent_id,
                                 "session_signal",
                                 data={"session": record.session_id, "kind": SIG_SEND_LATE})
            elif emit.kind == MsgKind.PATHS_ESTABLISHED.value:
                pass  # sent in one batch below, needs assignment context
            elif emit.kind == MsgKind.REJECT.value:
                kernel.send(MsgKind.REJECT.value, self.agent_id, "user",
                            session=record.session_id, payload={"cause": emit.note})
            elif emit.kind == MsgKind.START.value:
                kernel.send(MsgKind.START.value, self.agent_id, record.eps_id,
                            session=record.session_id, attempt=record.state.attempt)
                self._apply_event(kernel, record,
                                  SessionEvent(MsgKind.START.value, role=ROLE_CONTROLLER))
            elif emit.kind == MsgKind.END.value:
                kernel.send(MsgKind.END.value, self.agent_id, record.eps_id,
                            session=record.session_id, attempt=record.state.attempt)
            elif emit.kind in (MsgKind.SEND_ALIGNMENT.value, MsgKind.SEND_EARLY_LATE.value):
                target = record.role_nodes[emit.to]
                payload = {"mode": emit.note}
                if emit.note == "basis":
                    payload["basis"] = record.request.calib_basis
                kernel.send(emit.kind, self.agent_id, target,
                            session=record.session_id, attempt=record.state.attempt,
                            payload=payload)
        if any(e.kind == MsgKind.PATHS_ESTABLISHED.value for e in emits):
            self._send_paths_established(kernel, record)

    def _send_paths_established(self, kernel: Kernel, record: SessionRecord) -> None:
        cfg = self.config
        a = record.assignment
        eps_info = self.topology.nodes[record.eps_id].info
        arm_len = {1: sum(l.length_km for l in a.path_1.links),
                   2: sum(l.length_km for l in a.path_2.links)}
        node_1 = self.topology.nodes[record.request.qnode_1].info
        node_2 = self.topology.nodes[record.request.qnode_2].info
        bin_s = node_1.detectors.time_bin_width_s
        photon_s_per_km = cfg.classical_latency_s_per_km
        delay_ticks = {
            1: int(round(arm_len[1] * photon_s_per_km / bin_s)),
            2: int(round(arm_len[2] * photon_s_per_km / bin_s)),
        }
        nominal_offset = delay_ticks[2] - delay_ticks[1]
        eta_1 = transmittance_from_loss(record.predicted_loss[1])
        eta_2 = transmittance_from_loss(record.predicted_loss[2])
        coincidence_pred = (eps_info.pair_rate * eta_1.eta * node_1.detectors.efficiency
                            * eta_2.eta * node_2.detectors.efficiency)
        singles_pred = {
            1: eps_info.pair_rate * eta_1.eta * node_1.detectors.efficiency
               + node_1.detectors.dark_rate_hz,
            2: eps_info.pair_rate * eta_2.eta * node_2.detectors.efficiency
               + node_2.detectors.dark_rate_hz,
        }
        common = {
            "attempt": record.state.attempt,
            "encoding": record.request.qubit_type.value,
            "basis": record.request.calib_basis,
            "ebits": record.request.target_ebits,
            "end": record.request.end_time,
        }
        for role, arm in ((ROLE_QNODE_1, 1), (ROLE_QNODE_2, 2)):
            path = a.path_1 if arm == 1 else a.path_2
            channel = a.signal_ch if arm == 1 else a.idler_ch
            peer_role = ROLE_QNODE_2 if arm == 1 else ROLE_QNODE_1
            payload = dict(common)
            payload.update({
                "arm": arm, "channel": channel.label,
                "predicted_loss": round(record.predicted_loss[arm], 6),
                "rate": eps_info.pair_rate,
                "peer": record.role_nodes[peer_role],
                "side": "a" if arm == 1 else "b",
                "delay_nominal": nominal_offset,
                "delay_halfwidth": cfg.delay_range_halfwidth,
                "coincidence_rate": round(coincidence_pred, 6),
                "peer_singles": round(singles_pred[2 if arm == 1 else 1], 6),
                "delay_ticks": delay_ticks[arm],
            })
            kernel.send(MsgKind.PATHS_ESTABLISHED.value, self.agent_id,
                        record.role_nodes[role], session=record.session_id,
                        attempt=record.state.attempt, payload=payload,
                        data={"links": [list(l.link_id) for l in path.links]})
        eps_payload = dict(common)
        eps_payload.update({"signal": a.signal_ch.label, "idler": a.idler_ch.label,
                            "q1": record.request.qnode_1, "q2": record.request.qnode_2,
                            "coincidence_rate": round(coincidence_pred, 6),
                            "delay_ticks_1": delay_ticks[1],
                            "delay_ticks_2": delay_ticks[2]})
        kernel.send(MsgKind.PATHS_ESTABLISHED.value, self.agent_id, record.eps_id,
                    session=record.session_id, attempt=record.state.attempt,
                    payload=eps_payload,
                    data={"links_1": [list(l.link_id) for l in a.path_1.links],
                          "links_2": [list(l.link_id) for l in a.path_2.links]})

    def _apply_event(self, kernel: Kernel, record: SessionRecord,
                     event: SessionEvent) -> None:
        before = record.state
        after, emits = step_state(before, event, self.policy)
        record.state = after
        if after.phase is Phase.ROUTING and (before.phase is not Phase.ROUTING
                                             or event.kind == SIG_ROUTE):
            if event.kind != SIG_ROUTE:
                # re-route after a failed attempt: drop resources, then avoid
                # the arm that just failed by penalizing its links
                self._remember_failed_arm(record, event.arm)
                self._teardown_attempt(kernel, record)
            kernel.set_timer(0.0, self.agent_id, "establish",
                             data={"session": record.session_id,
                                   "attempt": after.attempt})
        self._materialize(kernel, record, emits)
        if record.state.terminal and record.terminal_time is None:
            self._finalize(kernel, record)
        elif record.state.phase is not before.phase or event.kind != SIG_TIMEOUT:
            self._arm_timeout(kernel, record)

    def _remember_failed_arm(self, record: SessionRecord, arm: int = 0) -> None:
        if record.assignment is None:
            return
        paths = {1: (record.assignment.path_1,), 2: (record.assignment.path_2,)}
        for path in paths.get(arm, (record.assignment.path_1, record.assignment.path_2)):
            record.avoid_links.update(l.link_id for l in path.links)

    def _arm_timeout(self, kernel: Kernel, record: SessionRecord) -> None:
        if record.state.terminal:
            return
        record.timer_epoch += 1
        if record.state.phase is Phase.ENTANGLING:
            deadline = record.request.end_time + self.config.timeout_s
            delay = max(deadline - kernel.now, 0.0)
        else:
            delay = self.config.timeout_s
        kernel.set_timer(delay, self.agent_id, "session_timeout",
                         data={"session": record.session_id, "epoch": record.timer_epoch})

    def _finalize(self, kernel: Kernel, record: SessionRecord) -> None:
        record.terminal_time = kernel.now
        record.timer_epoch += 1  # invalidates outstanding timers
        self._teardown_attempt(kernel, record)
        if record.eps_id and record.was_admitted:
            self.eps_committed[record.eps_id] = max(
                0, self.eps_committed.get(record.eps_id, 0) - 1)
        self.results.put(record.session_id, {
            "request": record.request,
            "final_state": record.state.phase.value,
            "cause": record.state.failure_cause,
            "ebits": record.ebits,
            "retries": record.state.retry_count,
            "recalibrations": record.recalibrations,
            "duration_s": record.terminal_time - record.admitted_time,
        })

    # -- message plumbing ------------------------------------------------------------

    def on_message(self, kernel: Kernel, msg: Message) -> None:
        if msg.kind == CTL_PORT_REPORT:
            self._on_port_report(kernel, msg)
            return
        if msg.kind == CTL_MONITOR_REPORT:
            self._on_monitor_report(kernel, msg)
            return
        if msg.kind == MsgKind.REQUEST.value:
            self._admit(kernel, msg)
            return
        record = self.sessions.get(msg.session)
        if record is None or record.state.terminal:
            return
        if msg.attempt != record.state.attempt:
            return  # stale attempt, superseded by a re-route
        event = self._event_from_message(kernel, record, msg)
        if event is not None:
            self._apply_event(kernel, record, event)

    def _event_from_message(self, kernel: Kernel, record: SessionRecord,
                            msg: Message) -> Optional[SessionEvent]:
        role = record.role_of(msg.sender)
        kind = msg.kind
        if kind == MsgKind.CLASSICAL_POWER_REPORT.value:
            arm = int(msg.payload["arm"])
            try:
                loss = protocol.verify_path_classical(
                    record.verify_ctx, arm,
                    float(msg.payload["injected"]), float(msg.payload["measured"]))
            except VerificationError as err:
                return SessionEvent(kind, role=role, arm=arm, ok=False, cause=err.cause)
            predicted = record.predicted_loss.get(arm, loss)
            ok = abs(loss - predicted) <= self.config.loss_tolerance_db
            return SessionEvent(kind, role=role, arm=arm, ok=ok,
                                cause="" if ok else "loss_mismatch")
        if kind == MsgKind.PATH_VERIFIED.value:
            return SessionEvent(kind, role=role, arm=int(msg.payload["arm"]))
        if kind == MsgKind.PATH_VERIFY_FAILED.value:
            return SessionEvent(kind, role=role, arm=int(msg.payload.get("arm", 0)),
                                cause=msg.payload.get("cause", ""))
        if kind == MsgKind.END.value:
            record.ebits = max(record.ebits, int(msg.payload.get("ebits", 0)))
            return SessionEvent(kind, role=role)
        if kind == MsgKind.RESULTS_POSTED.value:
            record.ebits = max(record.ebits, int(msg.payload.get("ebits", 0)))
            record.recalibrations += int(msg.payload.get("recals", 0))
            return SessionEvent(kind, role=role)
        if kind in (MsgKind.READY.value, MsgKind.ALIGNMENT_DONE.value,
                    MsgKind.BINS_IDENTIFIED.value):
            return SessionEvent(kind, role=role)
        return SessionEvent(kind, role=role)

    def on_timer(self, kernel: Kernel, tag: str, data: dict) -> None:
        if tag == "discover":
            self.start_discovery(kernel)
        elif tag == "discovery_timeout":
            self._finalize_discovery(kernel)
        elif tag == "monitor":
            if self.discovery_done:
                self._monitor_tick(kernel)
            else:
                kernel.set_timer(self.config.monitor_interval_s, self.agent_id, "monitor")
        elif tag == "establish":
            record = self.sessions.get(data["session"])
            if record is not None and record.state.attempt == data["attempt"]:
                self._establish(kernel, record)
        elif tag == "session_signal":
            record = self.sessions.get(data["session"])
            if record is not None and not record.state.terminal:
                self._apply_event(kernel, record,
                                  SessionEvent(data["kind"], cause=data.get("cause", "")))
        elif tag == "session_timeout":
            record = self.sessions.get(data["session"])
            if (record is not None and not record.state.terminal
                    and record.timer_epoch == data["epoch"]):
                self._apply_event(kernel, record, SessionEvent(SIG_TIMEOUT))

    # -- invariants and reporting ----------------------------------------------------

    def sweep(self, kernel: Kernel) -> None:
        """Resource-safety invariants, checked after every event."""
        self.ledger.check_consistency()
        active = {sid for sid, r in self.sessions.items()
                  if r.assignment is not None and not r.state.terminal}
        held = set(self.ledger.assignments)
        if held != active:
            raise AssertionError(f"ledger sessions {held} != active sessions {active}")
        if self.topology is not None:
            for node in self.topology.nodes_of_kind(NodeKind.EPS):
                count = sum(1 for a in self.ledger.assignments.values()
                            if a.eps == node.node_id)
                if count > node.info.capacity:
                    raise AssertionError(
                        f"{node.node_id} has {count} active pairs, capacity "
                        f"{node.info.capacity}")
        terminal = {sid for sid, r in self.sessions.items() if r.state.terminal}
        for model in self.ports.values():
            orphans = terminal & set(model.used.values())
            if orphans:
                raise AssertionError(
                    f"port model holds allocations for finished sessions "
                    f"{sorted(orphans)}")

    def final_checks(self, kernel: Kernel) -> None:
        """Quiescent-state invariants: once all messages have drained, no
        switch may still hold a cross-connect for a finished session."""
        terminal = {sid for sid, r in self.sessions.items() if r.state.terminal}
        for agent in kernel.agents.values():
            if isinstance(agent, SwitchAgent):
                orphans = terminal & set(agent.cross_connects)
                if orphans:
                    raise AssertionError(
                        f"{agent.agent_id} holds cross-connects for finished "
                        f"sessions {sorted(orphans)}")

    def build_report(self, kernel: Kernel) -> MetricsReport:
        report = MetricsReport()
        report.requests_total = len(self.sessions)
        report.messages_sent = kernel.messages_sent
        report.messages_delivered = kernel.messages_delivered
        report.messages_failed = kernel.messages_failed
        report.message_kind_counts = dict(kernel.message_kind_counts)
        report.sim_time_s = kernel.now
        busy = dict(self.link_busy_s)
        for record in self.sessions.values():
            if record.assignment is not None:
                for path in (record.assignment.path_1, record.assignment.path_2):
                    for link in path.links:
                        busy[link.link_id] = (busy.get(link.link_id, 0.0)
                                              + kernel.now - record.assigned_at)
        if kernel.now > 0.0:
            report.link_utilization = {f"{a}-{b}": t / kernel.now
                                       for (a, b), t in busy.items()}
        for sid in sorted(self.sessions, key=lambda s: int(s[1:])):
            record = self.sessions[sid]
            phase = record.state.phase
            end = record.terminal_time if record.terminal_time is not None else kernel.now
            duration = end - record.admitted_time
            report.sessions.append(SessionSummary(
                session_id=sid, final_state=phase.value,
                cause=record.state.failure_cause, ebits=record.ebits,
                retries=record.state.retry_count, duration_s=duration,
                recalibrations=record.recalibrations))
            if record.was_admitted:
                report.admitted += 1
            if phase is Phase.COMPLETE:
                report.completed += 1
            elif phase is Phase.FAILED:
                report.failed += 1
            elif phase is Phase.REJECTED:
                report.rejected += 1
                if record.state.failure_cause in RESOURCE_CAUSES:
                    report.blocked += 1
        return report


# --- data-plane agents ---------------------------------------------------------


@dataclass
class _NodeSession:
    attempt: int
    arm: int
    side: str                      # "a" matches raw ticks, "b" re-bases by the offset
    peer: str
    params: dict
    links: list[LinkId]
    ctx: SessionContext
    loss_estimate: Optional[float] = None
    gain_seen: bool = False
    on_sample: object = None
    sync_sent: int = 0
    own_sync: dict = field(default_factory=dict)
    peer_sync: dict = field(default_factory=dict)
    sync_running: bool = False
    sync_offset: Optional[int] = None
    own_q: dict = field(default_factory=dict)
    peer_q: dict = field(default_factory=dict)
    ebits: int = 0
    expected_rate: float = 0.0
    recals: int = 0
    ended: bool = False


class QNodeAgent(Agent):
    """Receiver station: verifies its arm, calibrates, syncs, then matches
    detection records with its peer until the e-bit target is met."""

    def __init__(self, node_id: str, info: QNodeInfo, config: SimConfig):
        super().__init__(node_id)
        self.info = info
        self.config = config
        self.sessions: dict[str, _NodeSession] = {}

    def _ns(self, sid: str, attempt: int) -> Optional[_NodeSession]:
        ns = self.sessions.get(sid)
        if ns is None or ns.attempt != attempt:
            return None
        return ns

    def _true_arm_loss(self, kernel: Kernel, ns: _NodeSession) -> float:
        links = [kernel.topology.link_between(*lid) for lid in ns.links]
        return kernel.ground_truth.path_loss_db(links)

    def on_message(self, kernel: Kernel, msg: Message) -> None:
        sid = msg.session
        if msg.kind == MsgKind.PATHS_ESTABLISHED.value:
            p = msg.payload
            ns = _NodeSession(
                attempt=msg.attempt, arm=int(p["arm"]), side=p["side"], peer=p["peer"],
                params=dict(p),
                links=[tuple(l) for l in msg.data["links"]],
                ctx=SessionContext(session_id=sid,
                                   encoding=QubitEncoding(p["encoding"]),
                                   noise_threshold=self.config.noise_threshold,
                                   band_sigma=self.config.band_sigma,
                                   loss_sigma_db=self.config.classical_meas_sigma_db),
                expected_rate=float(p["coincidence_rate"]))
            self.sessions[sid] = ns
            kernel.set_timer(self.config.dwell_classical_s, self.agent_id, "classical",
                             data={"session": sid, "attempt": msg.attempt})
            kernel.set_timer(max(p["end"] - kernel.now, 0.0), self.agent_id, "deadline",
                             data={"session": sid, "attempt": msg.attempt})
            return
        ns = self._ns(sid, msg.attempt)
        if ns is None:
            return
        if msg.kind == MsgKind.SEND_ALIGNMENT.value:
            self._on_alignment_command(kernel, sid, ns, msg.payload)
        elif msg.kind == MsgKind.SEND_EARLY_LATE.value:
            self._on_early_late(kernel, sid, ns, msg.payload["mode"])
        elif msg.kind == MsgKind.DETECTION_RECORD.value:
            self._on_detection_record(kernel, sid, ns, msg)

    # verification ------------------------------------------------------------

    def _measure_classical(self, kernel: Kernel, sid: str, ns: _NodeSession) -> None:
        true_loss = self._true_arm_loss(kernel, ns)
        rng = kernel.streams.stream("qnode", self.agent_id, sid, ns.attempt, "classical")
        injected = self.config.verify_injected_dbm
        measured = injected - true_loss + self.config.classical_meas_sigma_db * rng.standard_normal()
        estimate = injected - measured
        if estimate >= 0.0:
            ns.loss_estimate = estimate
            ns.ctx.measured_loss_db[ns.arm] = estimate
        else:
            ns.gain_seen = True
        kernel.send(MsgKind.CLASSICAL_POWER_REPORT.value, self.agent_id, "controller",
                    session=sid, attempt=ns.attempt,
                    payload={"arm": ns.arm, "injected": round(injected, 6),
                             "measured": round(measured, 6)})
        kernel.set_timer(self.config.dwell_quantum_s, self.agent_id, "quantum_on",
                         data={"session": sid, "attempt": ns.attempt})

    def _sample_quantum(self, kernel: Kernel, sid: str, ns: _NodeSession,
                        source_on: bool):
        rate = float(ns.params["rate"]) if source_on else 0.0
        eta = transmittance_from_loss(self._true_arm_loss(kernel, ns))
        stage = "qon" if source_on else "qoff"
        rng = kernel.streams.stream("qnode", self.agent_id, sid, ns.attempt, stage)
        return sample_counts(rate, eta, self.info.detectors,
                             self.config.dwell_quantum_s, rng,
                             leakage_rate_hz=self.config.leakage_rate_hz)

    def _finish_verification(self, kernel: Kernel, sid: str, ns: _NodeSession) -> None:
        off_sample = self._sample_quantum(kernel, sid, ns, source_on=False)
        if ns.gain_seen or ns.loss_estimate is None:
            return  # controller already failed the classical stage
        outcome = protocol.verify_path_quantum(
            ns.ctx, ns.arm, ns.on_sample, off_sample,
            float(ns.params["rate"]), self.info.detectors)
        if outcome.ok:
            kernel.send(MsgKind.PATH_VERIFIED.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt,
                        payload={"arm": ns.arm, "observed": outcome.observed,
                                 "expected": round(outcome.expected, 3)})
        else:
            kernel.send(MsgKind.PATH_VERIFY_FAILED.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt,
                        payload={"arm": ns.arm, "cause": outcome.cause})

    # calibration ---------------------------------------------------------------

    def _on_alignment_command(self, kernel: Kernel, sid: str, ns: _NodeSession,
                              payload: dict) -> None:
        cfg = self.config
        if payload["mode"] == "basis":
            truth = kernel.ground_truth.pol_offset_deg(sid, self.agent_id)
            rng = kernel.streams.stream("qnode", self.agent_id, sid, ns.attempt, "pol")
            try:
                result = protocol.calibrate_polarization(
                    ns.ctx, self.agent_id, truth, rng,
                    grid_step_deg=cfg.align_grid_step_deg,
                    dwell_s_per_point=cfg.align_dwell_s)
                kernel.set_timer(result.elapsed_s, self.agent_id, "align_done",
                                 data={"session": sid, "attempt": ns.attempt})
            except CalibrationError as err:
                kernel.set_timer(cfg.align_dwell_s, self.agent_id, "calib_failed",
                                 data={"session": sid, "attempt": ns.attempt,
                                       "cause": err.cause})
        else:  # interferometer phase for time-bin sessions
            scan_s = cfg.phase_grid_points * cfg.align_dwell_s
            kernel.set_timer(scan_s, self.agent_id, "align_done",
                             data={"session": sid, "attempt": ns.attempt})

    def _on_early_late(self, kernel: Kernel, sid: str, ns: _NodeSession, which: str) -> None:
        if which != "late":
            return  # early photons start the histogram; nothing to report yet
        cfg = self.config
        early, separation, phase = kernel.ground_truth.timebin_truth(sid, self.agent_id)
        rng = kernel.streams.stream("qnode", self.agent_id, sid, ns.attempt, "timebin")
        try:
            result = protocol.calibrate_timebin(
                ns.ctx, self.agent_id, rng, true_early_tick=early,
                bin_separation_ticks=separation, true_phase_rad=phase,
                phase_grid_points=cfg.phase_grid_points,
                histogram_dwell_s=cfg.histogram_dwell_s,
                dwell_s_per_point=cfg.align_dwell_s)
            kernel.set_timer(cfg.histogram_dwell_s, self.agent_id, "bins_done",
                             data={"session": sid, "attempt": ns.attempt,
                                   "early": result.early_tick, "late": result.late_tick})
        except CalibrationError as err:
            kernel.set_timer(cfg.histogram_dwell_s, self.agent_id, "calib_failed",
                             data={"session": sid, "attempt": ns.attempt,
                                   "cause": err.cause})

    # bit-level sync --------------------------------------------------------------

    def _begin_sync(self, kernel: Kernel, sid: str, ns: _NodeSession) -> None:
        cfg = self.config
        for i in range(cfg.sync_batches):
            kernel.set_timer((i + 1) * cfg.sync_batch_interval_s, self.agent_id,
                             "sync_batch",
                             data={"session": sid, "attempt": ns.attempt, "batch": i})

    def _sync_view(self, kernel: Kernel, sid: str, ns: _NodeSession,
                   batch: int) -> list[tuple[int, int]]:
        # Both stations derive the same emission stream; each sees it shifted
        # by its own photon path delay plus its local clock offset.
        rng = kernel.streams.fresh("sync", sid, ns.attempt, batch)
        base = protocol.coincidence_ticks(
            rng, float(ns.params["coincidence_rate"]) or 100.0,
            self.config.sync_batch_interval_s, self.info.detectors.time_bin_width_s,
            start_tick=batch << 24)
        outcomes = rng.integers(0, 2, size=len(base))
        shift = (int(ns.params["delay_ticks"])
                 + kernel.ground_truth.clock_offset_ticks(self.agent_id))
        return [(t + shift, int(o)) for t, o in zip(base, outcomes)]

    def _send_sync_batch(self, kernel: Kernel, sid: str, ns: _NodeSession,
                         batch: int) -> None:
        view = self._sync_view(kernel, sid, ns, batch)
        ns.own_sync[batch] = view
        ns.sync_sent += 1
        kernel.send(MsgKind.DETECTION_RECORD.value, self.agent_id, ns.peer,
                    session=sid, attempt=ns.attempt,
                    payload={"kind": "sync", "batch": batch}, data=view)
        self._maybe_run_scan(kernel, sid, ns)
        if ns.side == "a" and ns.sync_sent >= self.config.sync_batches:
            kernel.set_timer(self.config.sync_batch_interval_s, self.agent_id, "ready",
                             data={"session": sid, "attempt": ns.attempt})

    def _maybe_run_scan(self, kernel: Kernel, sid: str, ns: _NodeSession) -> None:
        cfg = self.config
        if (ns.side != "b" or ns.sync_running
                or ns.sync_sent < cfg.sync_batches
                or len(ns.peer_sync) < cfg.sync_batches):
            return
        ns.sync_running = True
        nominal = int(ns.params["delay_nominal"])
        true_offset = (nominal
                       + kernel.ground_truth.clock_offset_ticks(self.agent_id)
                       - kernel.ground_truth.clock_offset_ticks(ns.peer))
        halfwidth = int(ns.params["delay_halfwidth"])
        window = self.info.detectors.time_bin_width_s
        singles_self = (float(ns.params["rate"])
                        * transmittance_from_loss(ns.ctx.measured_loss_db[ns.arm]).eta
                        * self.info.detectors.efficiency + self.info.detectors.dark_rate_hz)
        accidental = singles_self * float(ns.params["peer_singles"]) * window
        model = DelayScanModel(
            true_rate_hz=max(float(ns.params["coincidence_rate"]), 1e-6),
            accidental_rate_hz=accidental,
            batch_target=cfg.scan_batch_target,
            sigma_multiplier=cfg.scan_sigma_multiplier)
        rng = kernel.streams.stream("qnode", self.agent_id, sid, ns.attempt, "scan")
        try:
            result = protocol.bit_level_sync(
                ns.ctx, rng, true_offset_ticks=true_offset,
                candidate_range=range(nominal - halfwidth, nominal + halfwidth + 1),
                scan_model=model)
            ns.sync_offset = result.offset
            kernel.set_timer(result.elapsed_s, self.agent_id, "ready",
                             data={"session": sid, "attempt": ns.attempt})
        except CalibrationError as err:
            kernel.set_timer(getattr(err, "elapsed_s", 0.0), self.agent_id,
                             "calib_failed",
                             data={"session": sid, "attempt": ns.attempt,
                                   "cause": err.cause})

    # entangle phase ---------------------------------------------------------------

    def _on_detection_record(self, kernel: Kernel, sid: str, ns: _NodeSession,
                             msg: Message) -> None:
        kind = msg.payload.get("kind")
        if kind == "sync":
            ns.peer_sync[int(msg.payload["batch"])] = msg.data
            self._maybe_run_scan(kernel, sid, ns)
            return
        if kind == "quantum":
            cycle = int(msg.payload["cycle"])
            records = msg.data
            if ns.side == "b":
                offset = ns.sync_offset or 0
                records = [(t - offset, o) for t, o in records]
            ns.own_q[cycle] = records
            kernel.send(MsgKind.DETECTION_RECORD.value, self.agent_id, ns.peer,
                        session=sid, attempt=ns.attempt,
                        payload={"kind": "exchange", "cycle": cycle,
                                 "duration": msg.payload["duration"]},
                        data=records)
            self._match_cycle(kernel, sid, ns, cycle, float(msg.payload["duration"]))
        elif kind == "exchange":
            cycle = int(msg.payload["cycle"])
            ns.peer_q[cycle] = msg.data
            self._match_cycle(kernel, sid, ns, cycle, float(msg.payload["duration"]))

    def _match_cycle(self, kernel: Kernel, sid: str, ns: _NodeSession, cycle: int,
                     duration: float) -> None:
        if ns.ended or cycle not in ns.own_q or cycle not in ns.peer_q:
            return
        own = dict(ns.own_q.pop(cycle))
        peer = dict(ns.peer_q.pop(cycle))
        matched = sum(1 for t in own if t in peer)
        ns.ebits += matched
        expected = ns.expected_rate * duration
        if abs(matched - expected) > 3.0 * math.sqrt(max(expected, 1.0)):
            # rate drifted: re-run the local alignment check and re-estimate
            # the arm transmittance from what we actually observe
            ns.recals += 1
            ns.expected_rate = matched / duration if duration > 0 else 0.0
        if ns.ebits >= int(ns.params["ebits"]):
            self._finish(kernel, sid, ns)

    def _finish(self, kernel: Kernel, sid: str, ns: _NodeSession) -> None:
        if ns.ended:
            return
        ns.ended = True
        kernel.send(MsgKind.END.value, self.agent_id, "controller",
                    session=sid, attempt=ns.attempt, payload={"ebits": ns.ebits})
        kernel.send(MsgKind.RESULTS_POSTED.value, self.agent_id, "controller",
                    session=sid, attempt=ns.attempt,
                    payload={"ebits": ns.ebits, "recals": ns.recals})

    # timers ------------------------------------------------------------------------

    def on_timer(self, kernel: Kernel, tag: str, data: dict) -> None:
        sid = data.get("session", "")
        ns = self._ns(sid, data.get("attempt", -1))
        if ns is None:
            return
        if tag == "classical":
            self._measure_classical(kernel, sid, ns)
        elif tag == "quantum_on":
            ns.on_sample = self._sample_quantum(kernel, sid, ns, source_on=True)
            kernel.set_timer(self.config.dwell_quantum_s, self.agent_id, "quantum_off",
                             data={"session": sid, "attempt": ns.attempt})
        elif tag == "quantum_off":
            self._finish_verification(kernel, sid, ns)
        elif tag == "bins_done":
            kernel.send(MsgKind.BINS_IDENTIFIED.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt,
                        payload={"early": data["early"], "late": data["late"]})
        elif tag == "align_done":
            kernel.send(MsgKind.ALIGNMENT_DONE.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt)
            self._begin_sync(kernel, sid, ns)
        elif tag == "calib_failed":
            kernel.send(MsgKind.PATH_VERIFY_FAILED.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt,
                        payload={"cause": data["cause"]})
        elif tag == "sync_batch":
            self._send_sync_batch(kernel, sid, ns, data["batch"])
        elif tag == "ready":
            kernel.send(MsgKind.READY.value, self.agent_id, "controller",
                        session=sid, attempt=ns.attempt)
        elif tag == "deadline":
            if not ns.ended:
                self._finish(kernel, sid, ns)


class EpsAgent(Agent):
    """Entangled-pair source: acknowledges path setup, emits alignment light
    on command, and streams detection records to both stations after START."""

    def __init__(self, node_id: str, info: EpsInfo, config: SimConfig):
        super().__init__(node_id)
        self.info = info
        self.config = config
        self.sessions: dict[str, dict] = {}

    def on_message(self, kernel: Kernel, msg: Message) -> None:
        sid = msg.session
        if msg.kind == MsgKind.PATHS_ESTABLISHED.value:
            self.sessions[sid] = {
                "attempt": msg.attempt, "payload": dict(msg.payload),
                "links_1": [tuple(l) for l in msg.data["links_1"]],
                "links_2": [tuple(l) for l in msg.data["links_2"]],
                "running": False, "cycle": 0,
            }
            kernel.send(MsgKind.READY.value, self.agent_id, "controller",
                        session=sid, attempt=msg.attempt)
            return
        es = self.sessions.get(sid)
        if es is None or es["attempt"] != msg.attempt:
            return
        if msg.kind == MsgKind.START.value:
            es["running"] = True
            kernel.set_timer(0.0, self.agent_id, "emit",
                             data={"session": sid, "attempt": msg.attempt})
        elif msg.kind == MsgKind.END.value:
            es["running"] = False
        # alignment / early-late commands need no action here: receivers
        # sample the emitted light directly from the ground-truth model

    def _current_rate(self, kernel: Kernel, es: dict) -> float:
        links_1 = [kernel.topology.link_between(*lid) for lid in es["links_1"]]
        links_2 = [kernel.topology.link_between(*lid) for lid in es["links_2"]]
        q1 = kernel.topology.nodes[es["payload"]["q1"]].info
        q2 = kernel.topology.nodes[es["payload"]["q2"]].info
        eta_1 = transmittance_from_loss(kernel.ground_truth.path_loss_db(links_1))
        eta_2 = transmittance_from_loss(kernel.ground_truth.path_loss_db(links_2))
        return (self.info.pair_rate * eta_1.eta * q1.detectors.efficiency
                * eta_2.eta * q2.detectors.efficiency)

    def on_timer(self, kernel: Kernel, tag: str, data: dict) -> None:
        if tag != "emit":
            return
        sid = data["session"]
        es = self.sessions.get(sid)
        if es is None or es["attempt"] != data["attempt"] or not es["running"]:
            return
        payload = es["payload"]
        if kernel.now >= float(payload["end"]):
            es["running"] = False
            return
        duration = min(self.config.emit_cycle_s, float(payload["end"]) - kernel.now)
        cycle = es["cycle"]
        es["cycle"] += 1
        q1 = kernel.topology.nodes[payload["q1"]].info
        rng = kernel.streams.stream("emit", sid, data["attempt"], cycle)
        ticks = protocol.coincidence_ticks(
            rng, self._current_rate(kernel, es), duration,
            q1.detectors.time_bin_width_s, start_tick=(cycle + 1) << 32)
        outcomes = rng.integers(0, 2, size=len(ticks))
        for target, delay_key in ((payload["q1"], "delay_ticks_1"),
                                  (payload["q2"], "delay_ticks_2")):
            shift = (int(payload[delay_key])
                     + kernel.ground_truth.clock_offset_ticks(target))
            view = [(t + shift, int(o)) for t, o in zip(ticks, outcomes)]
            kernel.send(MsgKind.DETECTION_RECORD.value, self.agent_id, target,
                        session=sid, attempt=data["attempt"],
                        payload={"kind": "quantum", "cycle": cycle,
                                 "duration": round(duration, 9)},
                        data=view)
        kernel.set_timer(duration, self.agent_id, "emit",
                         data={"session": sid, "attempt": data["attempt"]})


class SwitchAgent(Agent):
    """SDN-enabled optical switch: answers discovery and monitoring queries,
    applies cross-connect programs."""

    def __init__(self, node_id: str, kernel_topology: Topology, config: SimConfig):
        super().__init__(node_id)
        self.topology = kernel_topology
        self.config = config
        self.cross_connects: dict[str, list[tuple[int, int]]] = {}

    def on_message(self, kernel: Kernel, msg: Message) -> None:
        if msg.kind == CTL_PORT_QUERY:
            me = self.topology.nodes[self.agent_id]
            links = []
            neighbor_nodes = []
            for link in sorted(self.topology.incident_links(self.agent_id),
                               key=lambda l: l.link_id):
                links.append(_link_to_dict(link))
                neighbor_nodes.append(_node_to_dict(
                    self.topology.nodes[link.other_end(self.agent_id)]))
            kernel.send(CTL_PORT_REPORT, self.agent_id, msg.sender,
                        payload={"ports": me.info.port_count,
                                 "links": len(links)},
                        data={"node": _node_to_dict(me), "links": links,
                              "neighbors": neighbor_nodes})
        elif msg.kind == CTL_MONITOR_QUERY:
            losses = {}
            for link in sorted(self.topology.incident_links(self.agent_id),
                               key=lambda l: l.link_id):
                losses[link.link_id] = kernel.ground_truth.link_loss_db(link.link_id)
            kernel.send(CTL_MONITOR_REPORT, self.agent_id, msg.sender,
                        payload={"links": len(losses)}, data=losses)
        elif msg.kind == CTL_PROGRAM:
            self.cross_connects[msg.session] = list(msg.data)
        elif msg.kind == CTL_UNPROGRAM:
            self.cross_connects.pop(msg.session, None)


class UserAgent(Agent):
    """Request source; receives rejections so they appear in the trace."""

    def on_timer(self, kernel: Kernel, tag: str, data: dict) -> None:
        if tag != "request":
            return
        kernel.send(MsgKind.REQUEST.value, self.agent_id, "controller",
                    payload={"qubit": data["qubit_type"].value,
                             "from": data["qnode_1"], "to": data["qnode_2"],
                             "basis": data["basis"], "start": data["start_time"],
                             "end": data["end_time"], "ebits": data["target_ebits"]})


# --- simulation assembly ---------------------------------------------------------


def build_simulation(config: SimConfig, topology: Topology,
                     scenario_events: Iterable[ScenarioEvent]
                     ) -> tuple[Kernel, ControllerAgent]:
    """Wire agents, controller, scenario, and invariants into a kernel."""
    kernel = Kernel(config, topology)
    switch_ids = sorted(n.node_id for n in topology.nodes_of_kind(NodeKind.SWITCH))
    site = config.controller_site
    if not site:
        site = switch_ids[0] if switch_ids else sorted(topology.nodes)[0]

    for node in topology.nodes.values():
        if node.kind is NodeKind.QNODE:
            kernel.add_agent(QNodeAgent(node.node_id, node.info, config))
        elif node.kind is NodeKind.EPS:
            kernel.add_agent(EpsAgent(node.node_id, node.info, config))
        else:
            kernel.add_agent(SwitchAgent(node.node_id, topology, config))
    controller = ControllerAgent("controller", config, switch_ids)
    kernel.add_agent(controller, site=site)
    kernel.add_agent(UserAgent("user"), site=site)

    kernel.set_timer(0.0, "controller", "discover")
    kernel.set_timer(0.0, "controller", "monitor")
    for event in scenario_events:
        if event.kind == "request":
            kernel.schedule(event.time, "user", "timer", tag="request",
                            data=dict(event.params))
        else:
            kernel.inject_fault(event.time, event.kind, dict(event.params))
    kernel.sweep_hook = controller.sweep
    return kernel, controller
