"""Network model: typed nodes, lossy fiber links, wavelength channels.

The graph is unidirected: a link between ``a`` and ``b`` is the same object
seen from either side, and all loss figures are totals in dB. Topologies are
loaded from a line-oriented text document and are immutable after load;
anything that changes at run time (switch cross-connects, drifted losses)
lives outside this module.

Document grammar, one declaration per line, ``#`` starts a comment::

    node <id> qnode ip=<dotted-quad> channels=<k> encodings=pol,timebin
               [eff=<0..1>] [dark_hz=<x>] [bin_ns=<x>]
    node <id> eps rate=<pairs_per_s> n=<N> band=<O|C> grid=<ch1,ch2,...>
    node <id> switch ports=<M> il_db=<x>
    link <idA> <idB> len_km=<x> fiber_db=<x> il_db=<x> pdl_db=<x> classical=<none|ch list>

Channel tokens are ``C<n>`` (ITU 100 GHz grid, 190.0 + 0.1 n THz) or
``O<n>`` (222.0 + 0.1 n THz). Unknown keys are a hard error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

from .exceptions import TopologyParseError, TopologyValidationError
from .photonics import DetectorModel

SPEED_OF_LIGHT_KM_S = 299792.458  # exact

# Band windows in THz, converted from their nm definitions.
C_BAND_NM = (1525.0, 1565.0)
O_BAND_NM = (1290.0, 1350.0)

# Minimum quantum/classical frequency separation for co-propagation.
COEXISTENCE_GAP_THZ = 20.0


def freq_thz_from_nm(wavelength_nm: float) -> float:
    return SPEED_OF_LIGHT_KM_S / wavelength_nm


def nm_from_freq_thz(freq_thz: float) -> float:
    return SPEED_OF_LIGHT_KM_S / freq_thz


class Band(Enum):
    O = "O"
    C = "C"

    @property
    def freq_range_thz(self) -> tuple[float, float]:
        lo_nm, hi_nm = C_BAND_NM if self is Band.C else O_BAND_NM
        # shorter wavelength <-> higher frequency
        return (freq_thz_from_nm(hi_nm), freq_thz_from_nm(lo_nm))


class NodeKind(Enum):
    QNODE = "qnode"
    EPS = "eps"
    SWITCH = "switch"


class QubitEncoding(Enum):
    POLARIZATION = "pol"
    TIMEBIN = "timebin"


_CHANNEL_RE = re.compile(r"^([CO])(\d+)$")


@dataclass(frozen=True)
class WavelengthChannel:
    """One routable optical channel on the ITU-style grid."""

    label: str
    center_freq_thz: float
    band: Band
    width_ghz: float = 100.0

    def __post_init__(self):
        if self.width_ghz <= 0.0 or self.width_ghz > 100.0:
            raise TopologyValidationError(
                f"channel {self.label}: width must be in (0, 100] GHz", entity=self.label)
        lo, hi = self.band.freq_range_thz
        if not lo <= self.center_freq_thz <= hi:
            raise TopologyValidationError(
                f"channel {self.label}: {self.center_freq_thz:.3f} THz is outside the "
                f"{self.band.value} band ({lo:.3f}-{hi:.3f} THz)", entity=self.label)

    @property
    def wavelength_nm(self) -> float:
        return nm_from_freq_thz(self.center_freq_thz)


def parse_channel(token: str) -> WavelengthChannel:
    """Parse a ``C<n>`` or ``O<n>`` channel token."""
    m = _CHANNEL_RE.match(token)
    if not m:
        raise TopologyValidationError(f"bad channel token {token!r}", entity=token)
    band = Band(m.group(1))
    n = int(m.group(2))
    base = 190.0 if band is Band.C else 222.0
    return WavelengthChannel(label=token, center_freq_thz=round(base + 0.1 * n, 6), band=band)


# Classical sync light between receiver stations rides ITU C32 (1551.72 nm).
SYNC_CHANNEL = parse_channel("C32")


@dataclass(frozen=True)
class ChannelEndpointAddr:
    """<node ip, quantum channel #> pair addressing one quantum-channel endpoint."""

    node_ip: str
    channel_index: int

    def __post_init__(self):
        if self.channel_index < 0:
            raise TopologyValidationError("channel index must be >= 0")


@dataclass(frozen=True)
class QNodeInfo:
    ip: str
    quantum_channels: tuple[int, ...]
    detectors: DetectorModel
    supported_encodings: frozenset[QubitEncoding]

    def __post_init__(self):
        if tuple(self.quantum_channels) != tuple(range(len(self.quantum_channels))):
            raise TopologyValidationError(
                f"quantum channel indices must be consecutive from 0, got {self.quantum_channels}")
        if not self.supported_encodings:
            raise TopologyValidationError("q-node must support at least one encoding")


@dataclass(frozen=True)
class EpsInfo:
    """Entangled-pair source emitting on N grid channels (N/2 conjugate pairs)."""

    pair_rate: float
    num_wavelengths: int
    channel_grid: tuple[WavelengthChannel, ...]
    band: Band

    def __post_init__(self):
        if self.pair_rate <= 0.0:
            raise TopologyValidationError(f"pair rate must be > 0, got {self.pair_rate}")
        n = self.num_wavelengths
        if n <= 0 or n % 2 != 0:
            raise TopologyValidationError(f"wavelength count must be even and positive, got {n}")
        if len(self.channel_grid) != n:
            raise TopologyValidationError(
                f"grid lists {len(self.channel_grid)} channels, expected {n}")
        labels = [ch.label for ch in self.channel_grid]
        if len(set(labels)) != len(labels):
            raise TopologyValidationError(f"grid channels must be distinct, got {labels}")
        for ch in self.channel_grid:
            if ch.band is not self.band:
                raise TopologyValidationError(
                    f"grid channel {ch.label} is not in declared band {self.band.value}",
                    entity=ch.label)

    @property
    def capacity(self) -> int:
        """Concurrent sessions this source can feed: one per conjugate pair."""
        return self.num_wavelengths // 2

    def conjugate_pair(self, pair_index: int) -> tuple[WavelengthChannel, WavelengthChannel]:
        """1-based conjugate pair: grid index i pairs with N + 1 - i."""
        if not 1 <= pair_index <= self.capacity:
            raise TopologyValidationError(f"pair index {pair_index} out of range")
        return (self.channel_grid[pair_index - 1],
                self.channel_grid[self.num_wavelengths - pair_index])


@dataclass(frozen=True)
class SwitchInfo:
    """Static description of a wide-band MxM space switch."""

    port_count: int
    insertion_loss_db: float

    def __post_init__(self):
        if self.port_count < 1:
            raise TopologyValidationError(f"port count must be >= 1, got {self.port_count}")
        if self.insertion_loss_db < 0.0:
            raise TopologyValidationError("switch insertion loss must be >= 0 dB")


NodeInfo = Union[QNodeInfo, EpsInfo, SwitchInfo]


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: NodeKind
    info: NodeInfo


LinkId = tuple[str, str]


@dataclass(frozen=True)
class Link:
    """Fiber link with additive dB loss metrics.

    ``classical_channels`` lists in-fiber classical data channels; an empty
    tuple means dark fiber (quantum-only, or classical on separate strands).
    """

    endpoint_a: str
    endpoint_b: str
    length_km: float
    fiber_loss_db: float
    insertion_loss_db: float
    pdl_db: float = 0.0
    classical_channels: tuple[WavelengthChannel, ...] = ()

    def __post_init__(self):
        if self.endpoint_a == self.endpoint_b:
            raise TopologyValidationError(
                f"self-loop on {self.endpoint_a}", entity=self.endpoint_a)
        for value, name in ((self.length_km, "len_km"), (self.fiber_loss_db, "fiber_db"),
                            (self.insertion_loss_db, "il_db"), (self.pdl_db, "pdl_db")):
            if value < 0.0:
                raise TopologyValidationError(
                    f"link {self.endpoint_a}-{self.endpoint_b}: {name} must be >= 0")

    @property
    def link_id(self) -> LinkId:
        a, b = sorted((self.endpoint_a, self.endpoint_b))
        return (a, b)

    @property
    def carries_classical(self) -> bool:
        return bool(self.classical_channels)

    def weight_db(self, include_pdl: bool = False) -> float:
        w = self.fiber_loss_db + self.insertion_loss_db
        if include_pdl:
            w += self.pdl_db
        return w

    def other_end(self, node_id: str) -> str:
        if node_id == self.endpoint_a:
            return self.endpoint_b
        if node_id == self.endpoint_b:
            return self.endpoint_a
        raise TopologyValidationError(f"{node_id} is not an endpoint of {self.link_id}")


@dataclass
class Topology:
    """Immutable unidirected graph of typed nodes and lossy links."""

    nodes: dict[str, Node]
    links: tuple[Link, ...]
    _adjacency: dict[str, list[Link]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._adjacency = {node_id: [] for node_id in self.nodes}
        seen: set[LinkId] = set()
        for link in self.links:
            for end in (link.endpoint_a, link.endpoint_b):
                if end not in self.nodes:
                    raise TopologyValidationError(
                        f"link references unknown node {end!r}", entity=end)
            if link.link_id in seen:
                raise TopologyValidationError(
                    f"duplicate link {link.link_id}", entity="-".join(link.link_id))
            seen.add(link.link_id)
            self._adjacency[link.endpoint_a].append(link)
            self._adjacency[link.endpoint_b].append(link)
        self._validate_ips()
        self._validate_switch_fanout()

    def _validate_ips(self):
        ips: dict[str, str] = {}
        for node in self.nodes.values():
            if node.kind is NodeKind.QNODE:
                ip = node.info.ip
                if ip in ips:
                    raise TopologyValidationError(
                        f"duplicate IP {ip} on {ips[ip]} and {node.node_id}",
                        entity=node.node_id)
                ips[ip] = node.node_id

    def _validate_switch_fanout(self):
        # MxM switches must out-scale any attached source's wavelength count.
        for link in self.links:
            ends = (self.nodes[link.endpoint_a], self.nodes[link.endpoint_b])
            for me, other in (ends, ends[::-1]):
                if me.kind is NodeKind.SWITCH and other.kind is NodeKind.EPS:
                    if me.info.port_count <= other.info.num_wavelengths:
                        raise TopologyValidationError(
                            f"switch {me.node_id} has {me.info.port_count} ports but "
                            f"attached source {other.node_id} emits "
                            f"{other.info.num_wavelengths} wavelengths (need M > N)",
                            entity=me.node_id)

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TopologyValidationError(f"unknown node {node_id!r}", entity=node_id) from None

    def incident_links(self, node_id: str) -> list[Link]:
        self.node(node_id)
        return list(self._adjacency[node_id])

    def link_between(self, a: str, b: str) -> Optional[Link]:
        for link in self._adjacency.get(a, ()):
            if link.other_end(a) == b:
                return link
        return None

    def nodes_of_kind(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is kind]


def neighbors(topology: Topology, node_id: str) -> tuple[tuple[str, Link], ...]:
    """All (neighbor id, link) pairs incident to a node, sorted by neighbor id."""
    pairs = [(link.other_end(node_id), link) for link in topology.incident_links(node_id)]
    return tuple(sorted(pairs, key=lambda p: p[0]))


def walk_nodes(topology: Topology, path: Sequence[Link]) -> list[str]:
    """Node sequence traversed by a connected walk of links.

    Raises if consecutive links do not share an endpoint. A single link is
    oriented a->b as stored; longer walks are oriented by their joints.
    """
    if not path:
        return []
    if len(path) == 1:
        return [path[0].endpoint_a, path[0].endpoint_b]
    first, second = path[0], path[1]
    shared = {first.endpoint_a, first.endpoint_b} & {second.endpoint_a, second.endpoint_b}
    if not shared:
        raise TopologyValidationError(
            f"disconnected walk between {first.link_id} and {second.link_id}")
    joint = sorted(shared)[0]
    nodes = [first.other_end(joint), joint]
    for link in path[1:]:
        current = nodes[-1]
        if current not in (link.endpoint_a, link.endpoint_b):
            raise TopologyValidationError(
                f"disconnected walk at {current} before link {link.link_id}")
        nodes.append(link.other_end(current))
    return nodes


def path_loss_db(topology: Topology, path: Sequence[Link], include_pdl: bool = False) -> float:
    """Total dB over a walk: link weights plus insertion loss of every
    switch strictly interior to the walk (charged once per device)."""
    if not path:
        return 0.0
    nodes = walk_nodes(topology, path)
    total = sum(link.weight_db(include_pdl) for link in path)
    for node_id in nodes[1:-1]:
        node = topology.node(node_id)
        if node.kind is NodeKind.SWITCH:
            total += node.info.insertion_loss_db
    return total


@dataclass(frozen=True)
class CoexistenceReport:
    ok: bool
    violations: tuple[tuple[str, float], ...] = ()  # (classical label, gap THz)


def validate_coexistence(topology: Topology, quantum_ch: WavelengthChannel,
                         link: Link) -> CoexistenceReport:
    """Check the quantum/classical separation rule on one link.

    Co-propagation is fine on dark fiber; otherwise the quantum carrier must
    sit more than ``COEXISTENCE_GAP_THZ`` above every classical channel to
    keep spontaneous Raman noise out of the quantum band.
    """
    if not link.carries_classical:
        return CoexistenceReport(ok=True)
    violations = []
    for classical in link.classical_channels:
        gap = quantum_ch.center_freq_thz - classical.center_freq_thz
        if gap <= COEXISTENCE_GAP_THZ:
            violations.append((classical.label, gap))
    return CoexistenceReport(ok=not violations, violations=tuple(violations))


# --- document parsing -------------------------------------------------------

_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")
_IP_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")

_QNODE_KEYS = {"ip", "channels", "encodings", "eff", "dark_hz", "bin_ns"}
_EPS_KEYS = {"rate", "n", "band", "grid"}
_SWITCH_KEYS = {"ports", "il_db"}
_LINK_KEYS = {"len_km", "fiber_db", "il_db", "pdl_db", "classical"}


def _parse_kv(tokens: list[str], allowed: set[str], line_no: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for token in tokens:
        if "=" not in token:
            raise TopologyParseError(line_no, f"expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        if key not in allowed:
            raise TopologyParseError(line_no, f"unknown key {key!r}")
        if key in out:
            raise TopologyParseError(line_no, f"duplicate key {key!r}")
        out[key] = value
    return out


def _require(kv: dict[str, str], keys: Iterable[str], line_no: int) -> None:
    for key in keys:
        if key not in kv:
            raise TopologyParseError(line_no, f"missing required key {key!r}")


def _parse_float(kv: dict[str, str], key: str, line_no: int) -> float:
    try:
        return float(kv[key])
    except ValueError:
        raise TopologyParseError(line_no, f"{key}: not a number: {kv[key]!r}") from None


def _parse_int(kv: dict[str, str], key: str, line_no: int) -> int:
    try:
        return int(kv[key])
    except ValueError:
        raise TopologyParseError(line_no, f"{key}: not an integer: {kv[key]!r}") from None


def _validate_ip(ip: str, line_no: int) -> str:
    m = _IP_RE.match(ip)
    if not m or any(int(part) > 255 for part in m.groups()):
        raise TopologyParseError(line_no, f"bad IP address {ip!r}")
    return ip


def _parse_node(tokens: list[str], line_no: int) -> Node:
    if len(tokens) < 3:
        raise TopologyParseError(line_no, "node line needs: node <id> <kind> ...")
    node_id, kind_token = tokens[1], tokens[2]
    if not _ID_RE.match(node_id):
        raise TopologyParseError(line_no, f"bad node id {node_id!r}")
    if kind_token == "qnode":
        kv = _parse_kv(tokens[3:], _QNODE_KEYS, line_no)
        _require(kv, ("ip", "channels", "encodings"), line_no)
        count = _parse_int(kv, "channels", line_no)
        if count < 1:
            raise TopologyParseError(line_no, "channels must be >= 1")
        encodings = set()
        for token in kv["encodings"].split(","):
            try:
                encodings.add(QubitEncoding(token))
            except ValueError:
                raise TopologyParseError(line_no, f"unknown encoding {token!r}") from None
        detector = DetectorModel(
            efficiency=float(kv.get("eff", "1.0")),
            dark_rate_hz=float(kv.get("dark_hz", "100.0")),
            time_bin_width_s=float(kv.get("bin_ns", "1.0")) * 1e-9,
        )
        info = QNodeInfo(ip=_validate_ip(kv["ip"], line_no),
                         quantum_channels=tuple(range(count)),
                         detectors=detector,
                         supported_encodings=frozenset(encodings))
        return Node(node_id, NodeKind.QNODE, info)
    if kind_token == "eps":
        kv = _parse_kv(tokens[3:], _EPS_KEYS, line_no)
        _require(kv, _EPS_KEYS, line_no)
        try:
            band = Band(kv["band"])
        except ValueError:
            raise TopologyParseError(line_no, f"band must be O or C, got {kv['band']!r}") from None
        grid = tuple(parse_channel(token) for token in kv["grid"].split(","))
        info = EpsInfo(pair_rate=_parse_float(kv, "rate", line_no),
                       num_wavelengths=_parse_int(kv, "n", line_no),
                       channel_grid=grid, band=band)
        return Node(node_id, NodeKind.EPS, info)
    if kind_token == "switch":
        kv = _parse_kv(tokens[3:], _SWITCH_KEYS, line_no)
        _require(kv, _SWITCH_KEYS, line_no)
        info = SwitchInfo(port_count=_parse_int(kv, "ports", line_no),
                          insertion_loss_db=_parse_float(kv, "il_db", line_no))
        return Node(node_id, NodeKind.SWITCH, info)
    raise TopologyParseError(line_no, f"unknown node kind {kind_token!r}")


def _parse_link(tokens: list[str], line_no: int) -> Link:
    if len(tokens) < 4:
        raise TopologyParseError(line_no, "link line needs: link <idA> <idB> ...")
    a, b = tokens[1], tokens[2]
    kv = _parse_kv(tokens[3:], _LINK_KEYS, line_no)
    _require(kv, _LINK_KEYS, line_no)
    classical: tuple[WavelengthChannel, ...] = ()
    if kv["classical"] != "none":
        classical = tuple(parse_channel(token) for token in kv["classical"].split(","))
    return Link(endpoint_a=a, endpoint_b=b,
                length_km=_parse_float(kv, "len_km", line_no),
                fiber_loss_db=_parse_float(kv, "fiber_db", line_no),
                insertion_loss_db=_parse_float(kv, "il_db", line_no),
                pdl_db=_parse_float(kv, "pdl_db", line_no),
                classical_channels=classical)


def load_topology(document: str) -> Topology:
    """Parse and validate a topology document. Errors name the offending
    line or entity; nothing is silently ignored."""
    nodes: dict[str, Node] = {}
    links: list[Link] = []
    for line_no, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "node":
            node = _parse_node(tokens, line_no)
            if node.node_id in nodes:
                raise TopologyValidationError(
                    f"duplicate node id {node.node_id!r}", entity=node.node_id)
            nodes[node.node_id] = node
        elif tokens[0] == "link":
            links.append(_parse_link(tokens, line_no))
        else:
            raise TopologyParseError(line_no, f"unknown declaration {tokens[0]!r}")
    return Topology(nodes=nodes, links=tuple(links))


def _format_float(value: float) -> str:
    return f"{value:g}"


def serialize_topology(topology: Topology) -> str:
    """Render a topology back into the document format (stable ordering)."""
    lines = []
    for node_id in sorted(topology.nodes):
        node = topology.nodes[node_id]
        if node.kind is NodeKind.QNODE:
            info = node.info
            enc = ",".join(sorted(e.value for e in info.supported_encodings))
            det = info.detectors
            lines.append(
                f"node {node_id} qnode ip={info.ip} channels={len(info.quantum_channels)} "
                f"encodings={enc} eff={_format_float(det.efficiency)} "
                f"dark_hz={_format_float(det.dark_rate_hz)} "
                f"bin_ns={_format_float(det.time_bin_width_s * 1e9)}")
        elif node.kind is NodeKind.EPS:
            info = node.info
            grid = ",".join(ch.label for ch in info.channel_grid)
            lines.append(
                f"node {node_id} eps rate={_format_float(info.pair_rate)} "
                f"n={info.num_wavelengths} band={info.band.value} grid={grid}")
        else:
            info = node.info
            lines.append(
                f"node {node_id} switch ports={info.port_count} "
                f"il_db={_format_float(info.insertion_loss_db)}")
    for link in sorted(topology.links, key=lambda l: l.link_id):
        classical = ",".join(ch.label for ch in link.classical_channels) or "none"
        lines.append(
            f"link {link.endpoint_a} {link.endpoint_b} len_km={_format_float(link.length_km)} "
            f"fiber_db={_format_float(link.fiber_loss_db)} "
            f"il_db={_format_float(link.insertion_loss_db)} "
            f"pdl_db={_format_float(link.pdl_db)} classical={classical}")
    return "\n".join(lines) + "\n"
