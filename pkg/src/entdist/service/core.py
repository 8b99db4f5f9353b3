"""Service operations: the single implementation behind both the HTTP
routes and the command-line client."""

from __future__ import annotations

from .. import __version__
from ..exceptions import EntdistError
from ..rwa import Blocked, ChannelLedger, RouteMetric, assign_pair
from ..scenario import parse_scenario
from ..simkernel import SimConfig, run as run_simulation
from ..topology import NodeKind, load_topology
from .models import (RunRequest, RunResponse, RwaResult, RwaSolveRequest,
                     RwaSolveResponse, SessionResult, TopologySummary,
                     ValidateTopologyRequest, ValidateTopologyResponse,
                     VersionResponse)


def validate_topology_op(req: ValidateTopologyRequest) -> ValidateTopologyResponse:
    try:
        topo = load_topology(req.document)
    except EntdistError as err:
        return ValidateTopologyResponse(ok=False, error=str(err))
    summary = TopologySummary(
        nodes=len(topo.nodes), links=len(topo.links),
        qnodes=len(topo.nodes_of_kind(NodeKind.QNODE)),
        eps=len(topo.nodes_of_kind(NodeKind.EPS)),
        switches=len(topo.nodes_of_kind(NodeKind.SWITCH)))
    return ValidateTopologyResponse(ok=True, summary=summary)


def rwa_solve_op(req: RwaSolveRequest) -> RwaSolveResponse:
    """Process request lines sequentially against one shared ledger, so
    capacity exhaustion shows up as BLOCKED lines."""
    topo = load_topology(req.topology)
    ledger = ChannelLedger()
    metric = RouteMetric()
    results = []
    counter = 0
    for line_no, raw in enumerate(req.requests.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 4 or tokens[0] != "request":
            raise EntdistError(f"line {line_no}: expected 'request <eps> <q1> <q2>'")
        counter += 1
        outcome = assign_pair(topo, ledger, tokens[1], tokens[2], tokens[3], metric,
                              session_id=f"r{counter}")
        if isinstance(outcome, Blocked):
            results.append(RwaResult(status="BLOCKED", cause=outcome.cause,
                                     line=f"BLOCKED {outcome.cause}"))
        else:
            text = (f"ASSIGNED {outcome.signal_ch.label} {outcome.idler_ch.label} "
                    f"loss1={outcome.path_1.total_loss_db:.3f} "
                    f"loss2={outcome.path_2.total_loss_db:.3f}")
            results.append(RwaResult(
                status="ASSIGNED", signal=outcome.signal_ch.label,
                idler=outcome.idler_ch.label,
                loss1_db=round(outcome.path_1.total_loss_db, 6),
                loss2_db=round(outcome.path_2.total_loss_db, 6), line=text))
    return RwaSolveResponse(results=results)


def run_op(req: RunRequest) -> RunResponse:
    topo = load_topology(req.topology)
    events = parse_scenario(req.scenario)
    config = SimConfig(master_seed=req.seed)
    if req.max_retries is not None:
        config.max_retries = req.max_retries
    if req.timeout_s is not None:
        config.timeout_s = req.timeout_s
    if req.noise_threshold is not None:
        config.noise_threshold = req.noise_threshold
    if req.end_time is not None:
        config.end_time = req.end_time
    report, trace = run_simulation(config, topo, events)
    sessions = [SessionResult(
        session_id=s.session_id, final_state=s.final_state, cause=s.cause,
        ebits=s.ebits, retries=s.retries, duration_s=s.duration_s, line=s.line())
        for s in report.sessions]
    return RunResponse(sessions=sessions, metrics=report.render_metrics(),
                       trace=trace, session_lines=report.render_sessions(),
                       wall_runtime_s=report.wall_runtime_s)


def version_op() -> VersionResponse:
    return VersionResponse(name="entdist", version=__version__)
