"""Deterministic discrete-event engine.

Single virtual clock, one event queue ordered by (time, sequence), message
delivery with distance-proportional classical latency, named RNG substreams,
fault injection, and trace/metrics collection. Two runs with identical
inputs produce byte-identical trace and metrics files.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import time as _wallclock
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import CausalityError, UnreachableError
from .topology import LinkId, Topology

# Scheduling below (now - resolution guard) is a causality error.
TIME_RESOLUTION_S = 1e-9

# Control-plane message kinds (outside the session protocol vocabulary).
CTL_PORT_QUERY = "PortQuery"
CTL_PORT_REPORT = "PortReport"
CTL_PROGRAM = "Program"
CTL_UNPROGRAM = "Unprogram"
CTL_MONITOR_QUERY = "MonitorQuery"
CTL_MONITOR_REPORT = "MonitorReport"
CTL_DELIVERY_FAILURE = "DeliveryFailure"


@dataclass
class SimConfig:
    """Run-wide knobs. Defaults are sized so a nominal session completes in
    a few simulated seconds."""

    master_seed: int = 0
    classical_latency_s_per_km: float = 5e-6  # group velocity ~2e8 m/s
    end_time: float = 60.0
    max_retries: int = 3
    timeout_s: float = 5.0
    noise_threshold: float = 1.0 / 6.0
    band_sigma: float = 3.0
    duty_cycle_s: float = 10.0
    recal_duration_s: float = 0.05
    emit_cycle_s: float = 0.02
    degraded_threshold_db: float = 3.0
    monitor_interval_s: float = 1.0
    verify_injected_dbm: float = 0.0
    classical_meas_sigma_db: float = 0.2
    loss_tolerance_db: float = 1.0
    dwell_classical_s: float = 0.1
    dwell_quantum_s: float = 1.0
    align_grid_step_deg: float = 1.0
    align_dwell_s: float = 1e-3
    phase_grid_points: int = 100
    histogram_dwell_s: float = 0.1
    sync_batches: int = 3
    sync_batch_interval_s: float = 0.05
    delay_range_halfwidth: int = 32
    scan_batch_target: int = 10
    scan_sigma_multiplier: float = 3.0
    route_k: int = 8
    avoid_penalty_db: float = 30.0
    default_target_ebits: int = 1000
    controller_site: str = ""
    leakage_rate_hz: float = 0.0
    sweep_checks: bool = True


class RngStreams:
    """Named, order-independent substreams of one master seed.

    A stream is addressed by a tuple of names; the names are hashed into the
    seed material, so creating new agents or sessions never perturbs the
    draws of existing streams.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._cache: dict[tuple[str, ...], np.random.Generator] = {}

    def fresh(self, *names: Any) -> np.random.Generator:
        """A brand-new generator for this name tuple; repeated calls with the
        same names replay the identical sequence."""
        key = "/".join(str(n) for n in names)
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
        seq = np.random.SeedSequence([self.master_seed & 0xFFFFFFFFFFFFFFFF, *words])
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, *names: Any) -> np.random.Generator:
        """The shared, advancing generator for this name tuple."""
        key = tuple(str(n) for n in names)
        gen = self._cache.get(key)
        if gen is None:
            gen = self.fresh(*names)
            self._cache[key] = gen
        return gen


class GroundTruth:
    """What the physical plant actually is right now: baseline topology plus
    injected loss drift and downed nodes, and the hidden per-session offsets
    that calibration must recover."""

    def __init__(self, topology: Topology, streams: RngStreams):
        self.topology = topology
        self.streams = streams
        self.loss_extra_db: dict[LinkId, float] = {}
        self.down_nodes: set[str] = set()

    def link_loss_db(self, link_id: LinkId) -> float:
        link = self.topology.link_between(*link_id)
        if link is None:
            raise UnreachableError(f"no such link {link_id}")
        return link.weight_db() + self.loss_extra_db.get(link_id, 0.0)

    def path_loss_db(self, links: Sequence) -> float:
        from .topology import path_loss_db as base_loss
        extra = sum(self.loss_extra_db.get(l.link_id, 0.0) for l in links)
        return base_loss(self.topology, links) + extra

    def clock_offset_ticks(self, node: str, halfwidth: int = 15) -> int:
        rng = self.streams.fresh("truth", "clock", node)
        return int(rng.integers(-halfwidth, halfwidth + 1))

    def pol_offset_deg(self, session: str, node: str) -> float:
        rng = self.streams.fresh("truth", "pol", session, node)
        return float(rng.uniform(0.0, 180.0))

    def timebin_truth(self, session: str, node: str) -> tuple[int, int, float]:
        """(early tick, bin separation ticks, interferometer phase)."""
        rng = self.streams.fresh("truth", "timebin", session, node)
        early = int(rng.integers(0, 8))
        return early, 2, float(rng.uniform(0.0, 2.0 * math.pi))


@dataclass
class Message:
    """One classical message. ``payload`` appears in the trace; ``data``
    carries bulk content (tick lists) and is traced as a count only."""

    kind: str
    sender: str
    receiver: str
    session: str = "-"
    attempt: int = 0
    send_time: float = 0.0
    payload: dict = field(default_factory=dict)
    data: Any = None


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_trace_line(t: float, msg: Message) -> str:
    parts = [f"{t:.9f}", msg.sender, "->", msg.receiver, msg.session, msg.kind]
    fields = dict(sorted(msg.payload.items()))
    if msg.data is not None:
        try:
            fields["data"] = f"<{len(msg.data)}>"
        except TypeError:
            fields["data"] = "<1>"
    if fields:
        body = " ".join(f"{k}={_format_value(v)}" for k, v in fields.items())
        parts.append(f"[{body}]")
    return " ".join(parts)


@dataclass(order=True)
class Event:
    time: float
    seq: int
    target: str = field(compare=False)
    category: str = field(compare=False)       # message | timer | fault
    message: Optional[Message] = field(compare=False, default=None)
    tag: str = field(compare=False, default="")
    data: dict = field(compare=False, default_factory=dict)


class Agent:
    """Base class for everything addressable by the kernel."""

    def __init__(self, agent_id: str):
        self.agent_id = agent_id
        self.down = False

    def on_message(self, kernel: "Kernel", msg: Message) -> None:
        pass

    def on_timer(self, kernel: "Kernel", tag: str, data: dict) -> None:
        pass


class Kernel:
    """The event loop. Agents interact only through ``send`` and timers;
    all handlers run on this single logical thread."""

    def __init__(self, config: SimConfig, topology: Topology):
        self.config = config
        self.topology = topology
        self.streams = RngStreams(config.master_seed)
        self.ground_truth = GroundTruth(topology, self.streams)
        self.now = 0.0
        self._seq = 0
        self._heap: list[Event] = []
        self.agents: dict[str, Agent] = {}
        self.trace: list[str] = []
        self.messages_sent = 0
        self.messages_delivered = 0
        self.messages_failed = 0
        self.message_kind_counts: dict[str, int] = {}
        self.sweep_hook: Optional[Callable[["Kernel"], None]] = None
        self._site_of: dict[str, str] = {}
        self._distance_km: dict[tuple[str, str], float] = {}
        self._build_distances()

    # -- wiring ---------------------------------------------------------------

    def add_agent(self, agent: Agent, site: Optional[str] = None) -> None:
        self.agents[agent.agent_id] = agent
        self._site_of[agent.agent_id] = site if site is not None else agent.agent_id

    def _build_distances(self) -> None:
        # Classical reachability follows the fiber plant: messages ride
        # dedicated strands and patch panels along the same routes.
        nodes = sorted(self.topology.nodes)
        for src in nodes:
            dist = {src: 0.0}
            heap = [(0.0, src)]
            while heap:
                d, here = heapq.heappop(heap)
                if d > dist.get(here, math.inf):
                    continue
                for link in self.topology.incident_links(here):
                    there = link.other_end(here)
                    nd = d + link.length_km
                    if nd < dist.get(there, math.inf):
                        dist[there] = nd
                        heapq.heappush(heap, (nd, there))
            for dst, d in dist.items():
                self._distance_km[(src, dst)] = d

    def distance_km(self, a: str, b: str) -> Optional[float]:
        sa, sb = self._site_of.get(a, a), self._site_of.get(b, b)
        if sa == sb:
            return 0.0
        return self._distance_km.get((sa, sb))

    # -- scheduling -----------------------------------------------------------

    def schedule(self, at: float, target: str, category: str,
                 message: Optional[Message] = None, tag: str = "",
                 data: Optional[dict] = None) -> Event:
        if at < self.now - TIME_RESOLUTION_S:
            raise CausalityError(f"cannot schedule at {at} before now={self.now}")
        self._seq += 1
        event = Event(time=max(at, self.now), seq=self._seq, target=target,
                      category=category, message=message, tag=tag, data=data or {})
        heapq.heappush(self._heap, event)
        return event

    def set_timer(self, delay: float, target: str, tag: str,
                  data: Optional[dict] = None) -> Event:
        return self.schedule(self.now + delay, target, "timer", tag=tag, data=data)

    def send(self, kind: str, sender: str, receiver: str, *, session: str = "-",
             attempt: int = 0, payload: Optional[dict] = None, data: Any = None) -> None:
        """Queue a classical message; arrival is send time plus distance
        times the per-km latency, FIFO per (sender, receiver) channel."""
        msg = Message(kind=kind, sender=sender, receiver=receiver, session=session,
                      attempt=attempt, send_time=self.now,
                      payload=payload or {}, data=data)
        self.messages_sent += 1
        distance = self.distance_km(sender, receiver)
        receiver_agent = self.agents.get(receiver)
        if distance is None or receiver_agent is None:
            self._fail_delivery(msg, self.now)
            return
        arrival = self.now + distance * self.config.classical_latency_s_per_km
        self.schedule(arrival, receiver, "message", message=msg)

    def _fail_delivery(self, msg: Message, at: float) -> None:
        self.messages_failed += 1
        notice = Message(kind=CTL_DELIVERY_FAILURE, sender="kernel", receiver=msg.sender,
                         session=msg.session, send_time=at,
                         payload={"to": msg.receiver, "lost": msg.kind})
        self.trace.append(format_trace_line(at, notice))

    # -- execution ------------------------------------------------------------

    def run(self, until: Optional[float] = None) -> None:
        horizon = self.config.end_time if until is None else until
        while self._heap:
            if self._heap[0].time > horizon:
                break
            event = heapq.heappop(self._heap)
            self.now = event.time
            self._dispatch(event)
            if self.sweep_hook is not None and self.config.sweep_checks:
                self.sweep_hook(self)

    def _dispatch(self, event: Event) -> None:
        if event.category == "fault":
            self._apply_fault(event.tag, event.data)
            return
        agent = self.agents.get(event.target)
        if agent is None:
            return
        if event.category == "message":
            msg = event.message
            if agent.down:
                self._fail_delivery(msg, self.now)
                return
            self.messages_delivered += 1
            self.message_kind_counts[msg.kind] = self.message_kind_counts.get(msg.kind, 0) + 1
            self.trace.append(format_trace_line(self.now, msg))
            agent.on_message(self, msg)
        elif event.category == "timer":
            if agent.down:
                return
            agent.on_timer(self, event.tag, event.data)

    def _apply_fault(self, kind: str, data: dict) -> None:
        notice = Message(kind="Fault", sender="scenario", receiver=data.get("target", "-"),
                         payload={k: v for k, v in data.items() if k != "target"} | {"fault": kind})
        self.trace.append(format_trace_line(self.now, notice))
        if kind == "down":
            node = data["target"]
            self.ground_truth.down_nodes.add(node)
            agent = self.agents.get(node)
            if agent is not None:
                agent.down = True
        elif kind == "drift":
            link_id = tuple(data["link"])  # (a, b) sorted
            current = self.ground_truth.loss_extra_db.get(link_id, 0.0)
            self.ground_truth.loss_extra_db[link_id] = current + float(data["delta_db"])

    def inject_fault(self, at: float, kind: str, data: dict) -> None:
        self.schedule(at, "kernel", "fault", tag=kind, data=data)


@dataclass
class SessionSummary:
    session_id: str
    final_state: str
    cause: str
    ebits: int
    retries: int
    duration_s: float
    recalibrations: int = 0

    def line(self) -> str:
        state = self.final_state if not self.cause else f"{self.final_state}({self.cause})"
        return (f"SESSION {self.session_id} {state} ebits={self.ebits} "
                f"retries={self.retries} duration={self.duration_s:.6f}")


@dataclass
class MetricsReport:
    requests_total: int = 0
    admitted: int = 0
    blocked: int = 0
    completed: int = 0
    failed: int = 0
    rejected: int = 0
    messages_sent: int = 0
    messages_delivered: int = 0
    messages_failed: int = 0
    message_kind_counts: dict[str, int] = field(default_factory=dict)
    link_utilization: dict[str, float] = field(default_factory=dict)
    sessions: list[SessionSummary] = field(default_factory=list)
    sim_time_s: float = 0.0
    wall_runtime_s: float = 0.0  # reported on stdout, kept out of the file

    @property
    def blocking_ratio(self) -> float:
        denom = self.admitted + self.blocked
        return self.blocked / denom if denom else 0.0

    def render_metrics(self) -> str:
        """Deterministic key=value lines (excludes wall-clock runtime)."""
        lines = [
            f"admitted={self.admitted}",
            f"blocked={self.blocked}",
            f"blocking_ratio={self.blocking_ratio:.6f}",
            f"completed={self.completed}",
            f"failed={self.failed}",
            f"messages_delivered={self.messages_delivered}",
            f"messages_failed={self.messages_failed}",
            f"messages_sent={self.messages_sent}",
            f"rejected={self.rejected}",
            f"requests_total={self.requests_total}",
            f"sim_time_s={self.sim_time_s:.6f}",
        ]
        for kind in sorted(self.message_kind_counts):
            lines.append(f"msg_{kind}={self.message_kind_counts[kind]}")
        for link in sorted(self.link_utilization):
            lines.append(f"util_{link}={self.link_utilization[link]:.6f}")
        return "\n".join(lines) + "\n"

    def render_sessions(self) -> str:
        return "".join(s.line() + "\n" for s in self.sessions)


def run(config: SimConfig, topology: Topology, scenario_events: Iterable) -> tuple[MetricsReport, str]:
    """Build the agent population, execute a scenario, and collect results.

    Returns (metrics report, trace text). Identical (config, topology,
    scenario) inputs produce identical return values, byte for byte.
    """
    from .controller import build_simulation  # deferred: controller imports this module

    started = _wallclock.perf_counter()
    kernel, controller = build_simulation(config, topology, scenario_events)
    kernel.run()
    if config.sweep_checks and not kernel._heap:
        controller.final_checks(kernel)
    report = controller.build_report(kernel)
    report.wall_runtime_s = _wallclock.perf_counter() - started
    trace_text = "".join(line + "\n" for line in kernel.trace)
    return report, trace_text
