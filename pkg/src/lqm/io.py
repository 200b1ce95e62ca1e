"""Reading and writing scenario and trace files, plus trace comparison.

Scenario JSON (``"schema": 1``)
-------------------------------
Top-level keys: ``schema``, ``name``, ``dt``, ``horizon``, ``smooth_window``,
``links``, ``nodes``, ``segments``, ``demand``. Unknown keys anywhere are
rejected. Quantities may be plain numbers in base units (m, m/s, veh/m,
veh/s, s) or strings with a unit such as ``"20 km/h"`` or ``"100 veh/km"``.
``horizon`` is a step count, or a duration when given with a unit
(``"2000 s"``).

Trace CSV (schema 1)
--------------------
A comment line ``# lqm-trace schema=1 dt=<dt>`` followed by the header
``step,link_id,N_in,N_qu,N_out,q_in,q_out,L_q,rho_q`` and one row per
(step, link), sorted by step then link id. Numbers carry 12 significant
digits.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .network import (
    LinkKind,
    LinkParams,
    NodeSpec,
    RoadSegment,
    Scenario,
    build_segment,
    natural_key,
)

SCHEMA_VERSION = 1

UNITS: dict[str, dict[str, float]] = {
    "length": {"m": 1.0, "km": 1000.0},
    "speed": {"m/s": 1.0, "km/h": 1.0 / 3.6},
    "density": {"veh/m": 1.0, "veh/km": 1e-3},
    "rate": {"veh/s": 1.0},
    "time": {"s": 1.0},
    "fraction": {},
}

_QUANTITY = re.compile(r"^\s*([-+0-9.eEinfaINFA]+)\s*(\S+)?\s*$")


class SchemaError(ValueError):
    """A scenario file failed to parse or validate; ``errors`` lists every problem."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class _Reader:
    """Collects schema problems while converting a parsed JSON document."""

    def __init__(self):
        self.errors: list[str] = []

    def fail(self, where: str, msg: str) -> None:
        self.errors.append(f"{where}: {msg}")

    def keys(self, where: str, obj: Any, allowed: set[str], required: set[str] = frozenset()) -> bool:
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
            return False
        for key in sorted(set(obj) - allowed):
            self.fail(f"{where}.{key}", "unknown key")
        for key in sorted(set(required) - set(obj)):
            self.fail(f"{where}.{key}", "missing")
        return True

    def quantity(self, where: str, value: Any, dim: str) -> float | None:
        if isinstance(value, bool):
            self.fail(where, "expected a number")
            return None
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            m = _QUANTITY.match(value)
            if m:
                try:
                    number = float(m.group(1))
                except ValueError:
                    number = None
                unit = m.group(2)
                if number is not None:
                    if unit is None:
                        return number
                    table = UNITS[dim]
                    if unit in table:
                        return number * table[unit]
                    accepted = ", ".join(table) or "none (plain number)"
                    self.fail(where, f"unit {unit!r} not accepted for {dim} (accepted: {accepted})")
                    return None
        self.fail(where, f"cannot read {value!r} as a {dim}")
        return None

    def series(self, where: str, value: Any, dim: str) -> tuple[float, ...] | None:
        items = value if isinstance(value, list) else [value]
        if not items:
            self.fail(where, "empty series")
            return None
        out = [self.quantity(f"{where}[{n}]" if isinstance(value, list) else where, v, dim) for n, v in enumerate(items)]
        if any(v is None for v in out):
            return None
        return tuple(out)

    def text(self, where: str, value: Any) -> str | None:
        if isinstance(value, (str, int)) and not isinstance(value, bool):
            return str(value)
        self.fail(where, "expected an identifier")
        return None

    def ids(self, where: str, value: Any) -> tuple[str, ...]:
        if not isinstance(value, list):
            self.fail(where, "expected a list of ids")
            return ()
        return tuple(t for n, v in enumerate(value) if (t := self.text(f"{where}[{n}]", v)) is not None)


_LINK_KEYS = {
    "id", "kind", "length", "jam_density", "backward_wave_speed",
    "speed", "saturation_flow", "min_desired_speed",
}
_NODE_KEYS = {"id", "incoming", "outgoing", "turning_rates", "green", "conflict_sets"}
_SEGMENT_META_KEYS = {"id", "common_link", "turn_links", "divider_node", "movements", "links", "nodes"}
_SEGMENT_BUILD_KEYS = {
    "id", "length", "lanes", "turn_length", "turning_rates", "turn_speeds",
    "common_speed", "bay_length", "lane_split", "jam_density",
    "backward_wave_speed", "link_ids",
}
_DEMAND_KEYS = {"rate", "interval"}
_TOP_KEYS = {"schema", "name", "dt", "horizon", "smooth_window", "links", "nodes", "segments", "demand"}


def _read_link(r: _Reader, where: str, obj: Any) -> LinkParams | None:
    if not r.keys(where, obj, _LINK_KEYS, {"id"}):
        return None
    lid = r.text(f"{where}.id", obj.get("id"))
    try:
        kind = LinkKind(obj.get("kind", "common"))
    except ValueError:
        r.fail(f"{where}.kind", f"unknown link kind {obj.get('kind')!r}")
        return None
    if kind in (LinkKind.ORIGIN, LinkKind.SINK):
        extra = sorted(set(obj) - {"id", "kind"})
        if extra:
            r.fail(where, f"virtual link takes no parameters (got {', '.join(extra)})")
        return LinkParams(lid, kind) if lid is not None else None
    kwargs: dict[str, Any] = {}
    for key, dim, name in (
        ("length", "length", "length"),
        ("jam_density", "density", "jam_density"),
        ("backward_wave_speed", "speed", "backward_wave_speed"),
        ("min_desired_speed", "speed", "min_desired_speed"),
    ):
        if key in obj:
            kwargs[name] = r.quantity(f"{where}.{key}", obj[key], dim)
    if "length" not in obj:
        r.fail(f"{where}.length", "missing")
    if "speed" in obj:
        kwargs["speed_profile"] = r.series(f"{where}.speed", obj["speed"], "speed")
    else:
        r.fail(f"{where}.speed", "missing")
    if "saturation_flow" in obj:
        kwargs["saturation_flow"] = r.series(f"{where}.saturation_flow", obj["saturation_flow"], "rate")
    if lid is None or any(v is None for k, v in kwargs.items() if k != "min_desired_speed") or "speed_profile" not in kwargs:
        return None
    if kwargs.get("min_desired_speed", 0.0) is None:
        return None
    return LinkParams(lid, kind, **kwargs)


def _read_node(r: _Reader, where: str, obj: Any) -> NodeSpec | None:
    if not r.keys(where, obj, _NODE_KEYS, {"id", "incoming", "outgoing"}):
        return None
    nid = r.text(f"{where}.id", obj.get("id"))
    incoming = r.ids(f"{where}.incoming", obj.get("incoming", []))
    outgoing = r.ids(f"{where}.outgoing", obj.get("outgoing", []))
    rates = {}
    tr = obj.get("turning_rates", {})
    if isinstance(tr, dict):
        for j, row in tr.items():
            if not isinstance(row, dict):
                r.fail(f"{where}.turning_rates.{j}", "expected an object of outgoing -> rate")
                continue
            for i, e in row.items():
                v = r.quantity(f"{where}.turning_rates.{j}.{i}", e, "fraction")
                if v is not None:
                    rates[(j, i)] = v
    else:
        r.fail(f"{where}.turning_rates", "expected an object")
    green = {}
    gr = obj.get("green", {})
    if isinstance(gr, dict):
        for j, b in gr.items():
            s = r.series(f"{where}.green.{j}", b, "fraction")
            if s is not None:
                green[j] = s
    else:
        r.fail(f"{where}.green", "expected an object")
    csets = []
    for n, c in enumerate(obj.get("conflict_sets", [])):
        csets.append(frozenset(r.ids(f"{where}.conflict_sets[{n}]", c)))
    if nid is None:
        return None
    return NodeSpec(nid, incoming, outgoing, rates, green, tuple(csets))


def _read_segment_build(r: _Reader, where: str, obj: dict) -> RoadSegment | None:
    if not r.keys(where, obj, _SEGMENT_BUILD_KEYS, {"id", "length", "turn_length", "turning_rates", "turn_speeds"}):
        return None
    kwargs: dict[str, Any] = {}
    length = r.quantity(f"{where}.length", obj.get("length"), "length") if "length" in obj else None
    turn_length = r.quantity(f"{where}.turn_length", obj.get("turn_length"), "length") if "turn_length" in obj else None
    if "bay_length" in obj:
        kwargs["bay_length"] = r.quantity(f"{where}.bay_length", obj["bay_length"], "length")
    if "jam_density" in obj:
        kwargs["jam_density"] = r.quantity(f"{where}.jam_density", obj["jam_density"], "density")
    if "backward_wave_speed" in obj:
        kwargs["backward_wave_speed"] = r.quantity(f"{where}.backward_wave_speed", obj["backward_wave_speed"], "speed")
    if "common_speed" in obj:
        kwargs["common_speed"] = r.series(f"{where}.common_speed", obj["common_speed"], "speed")
    speeds = {}
    for m, v in (obj.get("turn_speeds") or {}).items():
        speeds[m] = r.series(f"{where}.turn_speeds.{m}", v, "speed")
    rates = {}
    for m, v in (obj.get("turning_rates") or {}).items():
        rates[m] = r.quantity(f"{where}.turning_rates.{m}", v, "fraction")
    if "lane_split" in obj:
        kwargs["lane_split"] = {m: [float(x) for x in v] for m, v in obj["lane_split"].items()}
    if "link_ids" in obj:
        kwargs["link_ids"] = {k: str(v) for k, v in obj["link_ids"].items()}
    if None in (length, turn_length) or None in kwargs.values() or None in speeds.values() or None in rates.values():
        return None
    try:
        return build_segment(
            str(obj["id"]), length, obj.get("lanes", "L|T|R"), turn_length, rates, turn_speeds=speeds, **kwargs
        )
    except (ValueError, KeyError) as exc:
        r.fail(where, str(exc))
        return None


def _read_segment_meta(r, where, obj, links, nodes) -> RoadSegment | None:
    if not r.keys(where, obj, _SEGMENT_META_KEYS, _SEGMENT_META_KEYS - {"divider_node"}):
        return None
    try:
        seg_links = tuple(links[l] for l in obj["links"])
        seg_nodes = tuple(nodes[n] for n in obj["nodes"])
        divider = nodes[obj["divider_node"]] if obj.get("divider_node") is not None else None
    except KeyError as exc:
        r.fail(where, f"unknown id {exc.args[0]!r}")
        return None
    movements = {str(l): {m: float(v) for m, v in mix.items()} for l, mix in obj["movements"].items()}
    return RoadSegment(
        str(obj["id"]), str(obj["common_link"]), tuple(str(t) for t in obj["turn_links"]),
        divider, movements, seg_links, seg_nodes,
    )


def smooth_demand(series: Sequence[float], window: int) -> tuple[float, ...]:
    """Replace each block of ``window`` consecutive samples by the block mean."""
    if window < 1:
        raise ValueError("smoothing window must be >= 1")
    values = [float(v) for v in series]
    out: list[float] = []
    for start in range(0, len(values), window):
        block = values[start : start + window]
        out.extend([math.fsum(block) / len(block)] * len(block))
    return tuple(out)


def _replicate(series: Sequence[float], interval: float, dt: float) -> tuple[float, ...]:
    n = max(1, math.ceil(len(series) * interval / dt - 1e-9))
    return tuple(series[min(len(series) - 1, int(math.floor(k * dt / interval + 1e-9)))] for k in range(n))


def scenario_from_dict(doc: Any, smooth_window: int | None = None) -> Scenario:
    r = _Reader()
    if not r.keys("scenario", doc, _TOP_KEYS, {"schema", "dt", "horizon", "links", "nodes"}):
        raise SchemaError(r.errors)
    if doc.get("schema") != SCHEMA_VERSION:
        r.fail("scenario.schema", f"unsupported schema {doc.get('schema')!r} (expected {SCHEMA_VERSION})")
    dt = r.quantity("scenario.dt", doc.get("dt"), "time") if "dt" in doc else None
    horizon = None
    hv = doc.get("horizon")
    if isinstance(hv, int) and not isinstance(hv, bool):
        horizon = hv
    elif isinstance(hv, str):
        seconds = r.quantity("scenario.horizon", hv, "time")
        if seconds is not None and dt:
            horizon = round(seconds / dt)
    elif "horizon" in doc:
        r.fail("scenario.horizon", "expected an integer step count or a duration such as '2000 s'")
    window = doc.get("smooth_window", 1) if smooth_window is None else smooth_window
    if not isinstance(window, int) or isinstance(window, bool) or window < 1:
        r.fail("scenario.smooth_window", "expected an integer >= 1")
        window = 1

    links: dict[str, LinkParams] = {}
    for n, obj in enumerate(doc.get("links", [])):
        link = _read_link(r, f"links[{n}]", obj)
        if link is not None:
            links[link.link_id] = link
    nodes: dict[str, NodeSpec] = {}
    for n, obj in enumerate(doc.get("nodes", [])):
        node = _read_node(r, f"nodes[{n}]", obj)
        if node is not None:
            nodes[node.node_id] = node

    segments = []
    built = []
    for n, obj in enumerate(doc.get("segments", [])):
        where = f"segments[{n}]"
        if isinstance(obj, dict) and "common_link" in obj:
            built.append((where, obj))
        elif isinstance(obj, dict):
            seg = _read_segment_build(r, where, obj)
            if seg is not None:
                segments.append(seg)
                for l in seg.links:
                    links.setdefault(l.link_id, l)
                for nd in seg.nodes:
                    nodes.setdefault(nd.node_id, nd)
        else:
            r.fail(where, "expected an object")
    for where, obj in built:
        seg = _read_segment_meta(r, where, obj, links, nodes)
        if seg is not None:
            segments.append(seg)

    demand = {}
    dem = doc.get("demand", {})
    if not isinstance(dem, dict):
        r.fail("scenario.demand", "expected an object")
        dem = {}
    for origin, spec in dem.items():
        where = f"demand.{origin}"
        interval = None
        if isinstance(spec, dict):
            if not r.keys(where, spec, _DEMAND_KEYS, {"rate"}):
                continue
            if "interval" in spec:
                interval = r.quantity(f"{where}.interval", spec["interval"], "time")
            spec = spec.get("rate")
        rates = r.series(where, spec, "rate")
        if rates is None:
            continue
        if interval is not None and dt:
            rates = _replicate(rates, interval, dt)
        demand[str(origin)] = smooth_demand(rates, window)

    if r.errors:
        raise SchemaError(r.errors)
    return Scenario(
        tuple(links.values()),
        tuple(nodes.values()),
        demand,
        dt,
        horizon,
        tuple(segments),
        str(doc.get("name", "")),
    )


def load_scenario(path: str | Path, smooth_window: int | None = None) -> Scenario:
    """Read a scenario file; ``smooth_window`` overrides the file's own setting."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return scenario_from_dict(doc, smooth_window)


def _scalar_or_list(series: Sequence[float]):
    return series[0] if len(series) == 1 else list(series)


def _link_dict(link: LinkParams) -> dict:
    if link.is_virtual:
        return {"id": link.link_id, "kind": link.kind.value}
    d = {
        "id": link.link_id,
        "kind": link.kind.value,
        "length": link.length,
        "jam_density": link.jam_density,
        "backward_wave_speed": link.backward_wave_speed,
        "speed": _scalar_or_list(link.speed_profile),
    }
    if link.saturation_flow is not None:
        d["saturation_flow"] = _scalar_or_list(link.saturation_flow)
    if link.min_desired_speed is not None:
        d["min_desired_speed"] = link.min_desired_speed
    return d


def _node_dict(node: NodeSpec) -> dict:
    rates: dict[str, dict[str, float]] = {}
    for (j, i), e in node.turning_rates.items():
        rates.setdefault(j, {})[i] = e
    d = {
        "id": node.node_id,
        "incoming": list(node.incoming),
        "outgoing": list(node.outgoing),
        "turning_rates": rates,
    }
    if node.green_fraction:
        d["green"] = {j: _scalar_or_list(b) for j, b in node.green_fraction.items()}
    if node.conflict_sets:
        d["conflict_sets"] = [sorted(c, key=natural_key) for c in node.conflict_sets]
    return d


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "name": s.name,
        "dt": s.dt,
        "horizon": s.horizon_steps,
        "links": [_link_dict(l) for l in s.links],
        "nodes": [_node_dict(n) for n in s.nodes],
        "segments": [
            {
                "id": seg.segment_id,
                "common_link": seg.common_link,
                "turn_links": list(seg.turn_links),
                "divider_node": None if seg.divider_node is None else seg.divider_node.node_id,
                "movements": {l: dict(mix) for l, mix in seg.movements.items()},
                "links": [l.link_id for l in seg.links],
                "nodes": [n.node_id for n in seg.nodes],
            }
            for seg in s.segments
        ],
        "demand": {o: _scalar_or_list(r) for o, r in s.demand.items()},
    }


def dump_scenario(s: Scenario, path: str | Path) -> None:
    """Write ``s`` as JSON; floats keep their exact binary value."""
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1) + "\n")


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


class TraceRow(NamedTuple):
    step: int
    link_id: str
    N_in: float
    N_qu: float
    N_out: float
    q_in: float
    q_out: float
    L_q: float
    rho_q: float


@dataclass(eq=False)
class TraceSet:
    """Per-step, per-link simulation output.

    ``data[q]`` is an array of shape ``(steps, len(link_ids))``. Rates at
    step ``k`` are averages over the step that starts at state ``k``.
    """

    QUANTITIES: ClassVar[tuple[str, ...]] = ("N_in", "N_qu", "N_out", "q_in", "q_out", "L_q", "rho_q")

    dt: float
    link_ids: tuple[str, ...]
    data: dict[str, np.ndarray]

    @property
    def steps(self) -> int:
        return self.data["N_in"].shape[0]

    def series(self, link_id: str, quantity: str) -> np.ndarray:
        return self.data[quantity][:, self.link_ids.index(link_id)]

    def rows(self) -> Iterator[TraceRow]:
        for k in range(self.steps):
            for c, lid in enumerate(self.link_ids):
                yield TraceRow(k, lid, *(float(self.data[q][k, c]) for q in self.QUANTITIES))

    def __len__(self) -> int:
        return self.steps * len(self.link_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.link_ids == other.link_ids
            and all(np.array_equal(self.data[q], other.data[q]) for q in self.QUANTITIES)
        )

    def allclose(self, other: "TraceSet", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        return (
            self.dt == other.dt
            and self.link_ids == other.link_ids
            and all(np.allclose(self.data[q], other.data[q], rtol=rtol, atol=atol) for q in self.QUANTITIES)
        )


TRACE_HEADER = ("step", "link_id") + TraceSet.QUANTITIES


def _num(x: float) -> str:
    return f"{x + 0.0:.12g}"


def trace_to_csv(trace: TraceSet) -> str:
    buf = _io.StringIO()
    buf.write(f"# lqm-trace schema={SCHEMA_VERSION} dt={_num(trace.dt)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in trace.rows():
        w.writerow((row.step, row.link_id, *(_num(v) for v in row[2:])))
    return buf.getvalue()


def write_trace(trace: TraceSet, path: str | Path) -> None:
    Path(path).write_text(trace_to_csv(trace))


def load_trace(path: str | Path) -> TraceSet:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# lqm-trace"):
        raise ValueError(f"{path}: line 1: missing '# lqm-trace' comment line")
    meta = dict(part.split("=", 1) for part in lines[0][1:].split()[1:])
    if meta.get("schema") != str(SCHEMA_VERSION):
        raise ValueError(f"{path}: line 1: unsupported trace schema {meta.get('schema')!r}")
    dt = float(meta["dt"])
    reader = csv.reader(lines[1:])
    header = tuple(next(reader, ()))
    if header != TRACE_HEADER:
        raise ValueError(f"{path}: line 2: header must be {','.join(TRACE_HEADER)}")
    by_step: dict[int, dict[str, list[float]]] = {}
    order: list[str] = []
    for lineno, fields in enumerate(reader, start=3):
        if len(fields) != len(TRACE_HEADER):
            raise ValueError(f"{path}: line {lineno}: expected {len(TRACE_HEADER)} fields")
        try:
            k = int(fields[0])
            values = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if k == 0:
            order.append(fields[1])
        by_step.setdefault(k, {})[fields[1]] = values
    steps = len(by_step)
    if sorted(by_step) != list(range(steps)):
        raise ValueError(f"{path}: steps are not contiguous from 0")
    data = {q: np.zeros((steps, len(order))) for q in TraceSet.QUANTITIES}
    for k, rows in by_step.items():
        if set(rows) != set(order):
            raise ValueError(f"{path}: step {k} does not list every link")
        for c, lid in enumerate(order):
            for n, q in enumerate(TraceSet.QUANTITIES):
                data[q][k, c] = rows[lid][n]
    return TraceSet(dt, tuple(order), data)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def epsilon(x, psi) -> float:
    """Root-mean-square difference of two equally long series."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(psi, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"series lengths differ ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("series are empty")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class ComparisonReport:
    quantities: tuple[str, ...]
    link_ids: tuple[str, ...]
    values: dict[tuple[str, str], float]

    def mean(self, quantity: str) -> float:
        return float(np.mean([self.values[(l, quantity)] for l in self.link_ids]))

    def std(self, quantity: str) -> float:
        return float(np.std([self.values[(l, quantity)] for l in self.link_ids]))

    def to_csv(self, groups: Mapping[str, str] | None = None) -> str:
        """Delimited table of per-link errors grouped by approach, then mean and std."""
        groups = groups or {}
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("group", "link_id", *(f"eps_{q}" for q in self.quantities)))
        ordered = sorted(self.link_ids, key=lambda l: (natural_key(groups.get(l, "")), natural_key(l)))
        for l in ordered:
            w.writerow((groups.get(l, ""), l, *(_num(self.values[(l, q)]) for q in self.quantities)))
        w.writerow(("", "mean", *(_num(self.mean(q)) for q in self.quantities)))
        w.writerow(("", "std", *(_num(self.std(q)) for q in self.quantities)))
        return buf.getvalue()


def compare_traces(a: TraceSet, b: TraceSet, quantities: Sequence[str] = ("N_in", "N_out")) -> ComparisonReport:
    if a.dt != b.dt or a.steps != b.steps or a.link_ids != b.link_ids:
        raise ValueError(
            f"trace grids differ: dt {a.dt} vs {b.dt}, steps {a.steps} vs {b.steps}, "
            f"{len(a.link_ids)} vs {len(b.link_ids)} links"
        )
    for q in quantities:
        if q not in TraceSet.QUANTITIES:
            raise ValueError(f"unknown quantity {q!r}")
    values = {(l, q): epsilon(a.series(l, q), b.series(l, q)) for l in a.link_ids for q in quantities}
    return ComparisonReport(tuple(quantities), a.link_ids, values)
