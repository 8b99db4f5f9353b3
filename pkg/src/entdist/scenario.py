"""Scenario files: timed requests and fault injections.

Grammar, one event per line, ``#`` comments::

    at <t> request qubit=<pol|timebin> from=<qnode> to=<qnode> basis=<label> \
        start=<t1> end=<t2> ebits=<n>
    at <t> drift <link> +<dB>        # link written as <idA>-<idB>
    at <t> down <node>
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .exceptions import ScenarioParseError
from .topology import QubitEncoding


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    kind: str  # request | drift | down
    params: dict = field(default_factory=dict)


_REQUEST_KEYS = {"qubit", "from", "to", "basis", "start", "end", "ebits"}


def _parse_request(tokens: list[str], line_no: int) -> dict:
    kv: dict[str, str] = {}
    for token in tokens:
        if "=" not in token:
            raise ScenarioParseError(line_no, f"expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        if key not in _REQUEST_KEYS:
            raise ScenarioParseError(line_no, f"unknown request key {key!r}")
        if key in kv:
            raise ScenarioParseError(line_no, f"duplicate key {key!r}")
        kv[key] = value
    missing = _REQUEST_KEYS - kv.keys()
    if missing:
        raise ScenarioParseError(line_no, f"missing request keys {sorted(missing)}")
    try:
        encoding = QubitEncoding(kv["qubit"])
    except ValueError:
        raise ScenarioParseError(line_no, f"unknown qubit type {kv['qubit']!r}") from None
    try:
        return {
            "qubit_type": encoding,
            "qnode_1": kv["from"],
            "qnode_2": kv["to"],
            "basis": kv["basis"],
            "start_time": float(kv["start"]),
            "end_time": float(kv["end"]),
            "target_ebits": int(kv["ebits"]),
        }
    except ValueError as exc:
        raise ScenarioParseError(line_no, str(exc)) from None


def parse_scenario(document: str) -> list[ScenarioEvent]:
    """Parse a scenario document into time-ordered events (stable order for
    equal timestamps)."""
    events: list[ScenarioEvent] = []
    for line_no, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 3 or tokens[0] != "at":
            raise ScenarioParseError(line_no, "event lines start with: at <t> <kind> ...")
        try:
            at = float(tokens[1])
        except ValueError:
            raise ScenarioParseError(line_no, f"bad timestamp {tokens[1]!r}") from None
        kind = tokens[2]
        if kind == "request":
            events.append(ScenarioEvent(at, "request", _parse_request(tokens[3:], line_no)))
        elif kind == "drift":
            if len(tokens) != 5:
                raise ScenarioParseError(line_no, "drift needs: at <t> drift <link> +<dB>")
            link_token = tokens[3]
            if "-" not in link_token:
                raise ScenarioParseError(line_no, f"bad link token {link_token!r}")
            a, b = link_token.split("-", 1)
            try:
                delta = float(tokens[4])
            except ValueError:
                raise ScenarioParseError(line_no, f"bad drift amount {tokens[4]!r}") from None
            link_id = tuple(sorted((a, b)))
            events.append(ScenarioEvent(at, "drift", {"link": link_id, "delta_db": delta}))
        elif kind == "down":
            if len(tokens) != 4:
                raise ScenarioParseError(line_no, "down needs: at <t> down <node>")
            events.append(ScenarioEvent(at, "down", {"target": tokens[3]}))
        else:
            raise ScenarioParseError(line_no, f"unknown event kind {kind!r}")
    return sorted(events, key=lambda e: e.time)
