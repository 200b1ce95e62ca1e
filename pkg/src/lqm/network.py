"""Network data model and scenario validation.

UNIT CONVENTIONS
----------------
Everything inside the library is SI-ish and per-link (not per-lane):

  - lengths: m
  - speeds (free-flow, backward wave, minimum desired): m/s
  - densities: veh/m
  - rates (demand, saturation flow): veh/s
  - time step ``dt``: s

Time-varying inputs (free-flow speed, saturation flow, green fractions,
demand) are step-indexed sequences. Step ``k`` covers the interval
``[k*dt, (k+1)*dt)``. Reading past the end of a sequence returns its last
value.
"""

from __future__ import annotations

import enum
import functools
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

ROW_SUM_TOL = 1e-9
CONFLICT_TOL = 1e-12

#: Table-2 style defaults: 20 km/h backward wave speed, 100 veh/km jam density.
DEFAULT_WAVE_SPEED = 20.0 / 3.6
DEFAULT_JAM_DENSITY = 0.1


class CflWarning(UserWarning):
    """A link is short enough that the fixed-speed queue update would need n_f < 2."""


def at(series: Sequence[float], k: int) -> float:
    """Value of a step-indexed series at ``k`` with last-value extension."""
    if k >= len(series):
        return series[-1]
    return series[max(k, 0)]


def as_series(value) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    out = tuple(float(v) for v in value)
    if not out:
        raise ValueError("empty series")
    return out


_NATURAL = re.compile(r"(\d+)")


@functools.lru_cache(maxsize=65536)
def natural_key(text: str):
    """Sort key that orders ``"2" < "10"`` and ``"a.2" < "a.10"``."""
    return tuple(int(p) if p.isdigit() else p for p in _NATURAL.split(text))


class LinkKind(str, enum.Enum):
    COMMON = "common"
    TURN = "turn"
    ORIGIN = "origin"
    SINK = "sink"


@dataclass(frozen=True)
class LinkParams:
    """Static parameters of one link.

    Origins and sinks are virtual links: they carry no geometry and are
    treated by the engine as an unbounded source (with a backlog) and an
    unbounded sink respectively.
    """

    link_id: str
    kind: LinkKind = LinkKind.COMMON
    length: float = 0.0
    jam_density: float = DEFAULT_JAM_DENSITY
    backward_wave_speed: float = DEFAULT_WAVE_SPEED
    speed_profile: tuple[float, ...] = (11.0,)
    saturation_flow: tuple[float, ...] | None = None
    min_desired_speed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))
        object.__setattr__(self, "speed_profile", as_series(self.speed_profile))
        if self.saturation_flow is not None:
            object.__setattr__(self, "saturation_flow", as_series(self.saturation_flow))

    @classmethod
    def origin(cls, link_id: str) -> "LinkParams":
        return cls(link_id, LinkKind.ORIGIN)

    @classmethod
    def sink(cls, link_id: str) -> "LinkParams":
        return cls(link_id, LinkKind.SINK)

    @property
    def is_virtual(self) -> bool:
        return self.kind in (LinkKind.ORIGIN, LinkKind.SINK)

    @property
    def v_min(self) -> float:
        if self.min_desired_speed is not None:
            return self.min_desired_speed
        return min(self.speed_profile)

    def free_flow_speed(self, k: int) -> float:
        return at(self.speed_profile, k)


@dataclass(frozen=True)
class NodeSpec:
    """A node joining incoming links to outgoing links.

    ``turning_rates`` maps ``(incoming, outgoing)`` to the fraction of the
    incoming link's outflow bound for that outgoing link. ``green_fraction``
    maps incoming link ids to a step-indexed effective green fraction; links
    absent from the map are unsignalised (fraction 1). Each entry of
    ``conflict_sets`` names incoming links whose green fractions must not sum
    above 1.
    """

    node_id: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]
    turning_rates: Mapping[tuple[str, str], float] = field(default_factory=dict)
    green_fraction: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    conflict_sets: tuple[frozenset[str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "incoming", tuple(self.incoming))
        object.__setattr__(self, "outgoing", tuple(self.outgoing))
        object.__setattr__(
            self, "turning_rates", {(j, i): float(e) for (j, i), e in self.turning_rates.items()}
        )
        object.__setattr__(
            self, "green_fraction", {j: as_series(b) for j, b in self.green_fraction.items()}
        )
        object.__setattr__(
            self, "conflict_sets", tuple(frozenset(c) for c in self.conflict_sets)
        )

    def rate(self, j: str, i: str) -> float:
        return self.turning_rates.get((j, i), 0.0)

    def green(self, j: str, k: int) -> float:
        series = self.green_fraction.get(j)
        return 1.0 if series is None else at(series, k)


@dataclass(frozen=True)
class RoadSegment:
    """A road segment split into a common link and turn links.

    ``turn_links`` are the links that reach the stop line. ``movements``
    gives, per turn link, the share of its flow making each movement
    (``"L"``, ``"T"``, ``"R"``); dedicated lanes carry a single movement with
    share 1. ``links`` and ``nodes`` list everything the segment owns,
    including the intermediate link and inner divider of a nested bay.
    """

    segment_id: str
    common_link: str
    turn_links: tuple[str, ...]
    divider_node: NodeSpec | None
    movements: Mapping[str, Mapping[str, float]]
    links: tuple[LinkParams, ...]
    nodes: tuple[NodeSpec, ...]

    def check(self) -> list[str]:
        problems = []
        for node in self.nodes:
            for j in node.incoming:
                for b in node.green_fraction.get(j, (1.0,)):
                    if b != 1.0:
                        problems.append(f"divider {node.node_id} signalises {j} (b={b})")
                        break
        for link, mix in self.movements.items():
            if len(mix) == 1 and abs(next(iter(mix.values())) - 1.0) > ROW_SUM_TOL:
                problems.append(f"dedicated turn link {link} has turning rate != 1")
        return problems


@dataclass(frozen=True)
class Scenario:
    links: tuple[LinkParams, ...]
    nodes: tuple[NodeSpec, ...]
    demand: Mapping[str, tuple[float, ...]]
    dt: float
    horizon_steps: int
    segments: tuple[RoadSegment, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "demand", {o: as_series(r) for o, r in self.demand.items()})

    def link(self, link_id: str) -> LinkParams:
        for link in self.links:
            if link.link_id == link_id:
                return link
        raise KeyError(link_id)

    @property
    def physical_links(self) -> list[LinkParams]:
        return [l for l in self.links if not l.is_virtual]

    def with_overrides(self, dt: float | None = None, horizon_steps: int | None = None) -> "Scenario":
        """Copy with a new step size and/or horizon.

        Changing ``dt`` resamples every step-indexed input by time
        (sample-and-hold) and keeps the simulated duration unless a horizon
        is also given.
        """
        s = self
        if dt is not None and dt != self.dt:
            ratio = self.dt / dt

            def rs(series):
                n = max(1, math.ceil(len(series) * ratio - 1e-9))
                return tuple(at(series, int(math.floor(k / ratio + 1e-9))) for k in range(n))

            links = [
                replace(
                    l,
                    speed_profile=rs(l.speed_profile),
                    saturation_flow=None if l.saturation_flow is None else rs(l.saturation_flow),
                )
                for l in s.links
            ]
            nodes = [
                replace(n, green_fraction={j: rs(b) for j, b in n.green_fraction.items()})
                for n in s.nodes
            ]
            s = replace(
                s,
                links=tuple(links),
                nodes=tuple(nodes),
                demand={o: rs(r) for o, r in s.demand.items()},
                dt=dt,
                horizon_steps=round(s.horizon_steps * ratio),
            )
        if horizon_steps is not None:
            s = replace(s, horizon_steps=horizon_steps)
        return s


# ---------------------------------------------------------------------------
# Road segment construction
# ---------------------------------------------------------------------------

_MOVES = "LTR"


def _parse_lanes(lanes: str) -> list[tuple[str, bool]]:
    if not lanes:
        return []
    out = []
    for raw in lanes.split("|"):
        tok = raw.strip()
        bay = tok.startswith("(") and tok.endswith(")")
        if bay:
            tok = tok[1:-1]
        if not tok or any(c not in _MOVES for c in tok) or len(set(tok)) != len(tok):
            raise ValueError(f"unknown configuration token {raw!r} in {lanes!r}")
        out.append(("".join(sorted(tok, key=_MOVES.index)), bay))
    return out


def _lane_speed(moves: str, turn_speeds: Mapping[str, Sequence[float] | float]) -> tuple[float, ...]:
    profiles = [as_series(turn_speeds[m]) for m in moves]
    n = max(len(p) for p in profiles)
    return tuple(min(at(p, k) for p in profiles) for k in range(n))


def build_segment(
    segment_id: str,
    length: float,
    lanes: str,
    turn_length: float,
    turning_rates: Mapping[str, float],
    *,
    turn_speeds: Mapping[str, Sequence[float] | float],
    common_speed: Sequence[float] | float = 11.0,
    bay_length: float | None = None,
    lane_split: Mapping[str, Sequence[float]] | None = None,
    jam_density: float = DEFAULT_JAM_DENSITY,
    backward_wave_speed: float = DEFAULT_WAVE_SPEED,
    link_ids: Mapping[str, str] | None = None,
) -> RoadSegment:
    """Split a road segment into a common link and turn links.

    ``lanes`` is a lane configuration read left to right, e.g. ``"L|T|R"``
    (dedicated), ``"L|T|TR"`` (shared) or ``"(L)|L|TR"`` where the
    parenthesised lane is a bay that only exists over the last
    ``bay_length`` metres. Each lane becomes one turn link of
    ``turn_length``; a bay and its parent lane share an intermediate link of
    ``turn_length - bay_length`` followed by a second divider. Flow of a
    movement served by several lanes is split evenly unless ``lane_split``
    gives explicit per-lane fractions (in lane order).

    ``link_ids`` may rename generated links: key ``"C"`` for the common link,
    the lane token (``"L"``, ``"TR"``, ``"(L)"``) for turn links, and
    ``"<token>c"`` for a bay's intermediate link.
    """
    parsed = _parse_lanes(lanes)
    ids = dict(link_ids or {})
    common_id = ids.get("C", f"{segment_id}.C")

    def physical(link_id, kind, seg_len, speed):
        return LinkParams(
            link_id,
            kind,
            length=float(seg_len),
            jam_density=jam_density,
            backward_wave_speed=backward_wave_speed,
            speed_profile=as_series(speed),
        )

    if not parsed:
        common = physical(common_id, LinkKind.COMMON, length, common_speed)
        return RoadSegment(segment_id, common_id, (), None, {}, (common,), ())

    if not 0 < turn_length < length:
        raise ValueError(f"turn length {turn_length} must lie in (0, {length})")

    rates = {m: float(e) for m, e in turning_rates.items() if float(e) > 0}
    served = {m: [n for n, (moves, _) in enumerate(parsed) if m in moves] for m in rates}
    for m, lanes_for_m in served.items():
        if not lanes_for_m:
            raise ValueError(f"movement {m!r} has a turning rate but no lane serves it")

    share = [0.0] * len(parsed)
    per_move = [dict() for _ in parsed]
    for m, lanes_for_m in served.items():
        split = (lane_split or {}).get(m)
        if split is None:
            split = [1.0 / len(lanes_for_m)] * len(lanes_for_m)
        if len(split) != len(lanes_for_m):
            raise ValueError(f"lane_split for {m!r} needs {len(lanes_for_m)} entries")
        for n, frac in zip(lanes_for_m, split):
            share[n] += rates[m] * frac
            per_move[n][m] = rates[m] * frac

    # lane token -> id, numbering duplicates left to right
    tokens = [f"({moves})" if bay else moves for moves, bay in parsed]
    counts: dict[str, int] = {}
    lane_ids = []
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    seen: dict[str, int] = {}
    for tok in tokens:
        seen[tok] = seen.get(tok, 0) + 1
        key = tok if counts[tok] == 1 else f"{tok}{seen[tok]}"
        lane_ids.append(ids.get(key, f"{segment_id}.{key}"))

    movements = {}
    for n, lid in enumerate(lane_ids):
        if share[n] > 0:
            movements[lid] = {m: v / share[n] for m, v in per_move[n].items()}
        else:
            movements[lid] = {m: 1.0 / len(parsed[n][0]) for m in parsed[n][0]}

    # bays: each bay branches off the first regular lane with the same movements
    groups: dict[int, list[int]] = {}
    for n, (moves, bay) in enumerate(parsed):
        if not bay:
            continue
        parent = next((p for p, (mv, b) in enumerate(parsed) if not b and mv == moves), None)
        if parent is None:
            raise ValueError(f"bay lane ({moves}) needs a regular lane serving the same movements")
        groups.setdefault(parent, [parent]).append(n)
    if groups and (bay_length is None or not 0 < bay_length < turn_length):
        raise ValueError("nested configurations need 0 < bay_length < turn_length")

    links = [physical(common_id, LinkKind.COMMON, length - turn_length, common_speed)]
    outer_rates: dict[tuple[str, str], float] = {}
    nodes = []
    grouped = {n for members in groups.values() for n in members}

    for n, (moves, bay) in enumerate(parsed):
        if n in grouped:
            continue
        links.append(physical(lane_ids[n], LinkKind.TURN, turn_length, _lane_speed(moves, turn_speeds)))
        outer_rates[(common_id, lane_ids[n])] = share[n]

    for parent, members in groups.items():
        moves = parsed[parent][0]
        mid_key = f"{tokens[parent]}c"
        mid_id = ids.get(mid_key, f"{segment_id}.{mid_key}")
        speed = _lane_speed(moves, turn_speeds)
        group_share = sum(share[n] for n in members)
        links.append(physical(mid_id, LinkKind.TURN, turn_length - bay_length, speed))
        outer_rates[(common_id, mid_id)] = group_share
        inner_rates = {}
        for n in sorted(members):
            links.append(physical(lane_ids[n], LinkKind.TURN, bay_length, speed))
            inner_rates[(mid_id, lane_ids[n])] = (
                share[n] / group_share if group_share > 0 else 1.0 / len(members)
            )
        nodes.append(
            NodeSpec(
                f"{segment_id}.div.{tokens[parent]}",
                (mid_id,),
                tuple(lane_ids[n] for n in sorted(members)),
                inner_rates,
            )
        )

    outer = NodeSpec(
        f"{segment_id}.div",
        (common_id,),
        tuple(i for (_, i) in outer_rates),
        outer_rates,
    )
    nodes.insert(0, outer)
    return RoadSegment(
        segment_id,
        common_id,
        tuple(lane_ids),
        outer,
        movements,
        tuple(links),
        tuple(nodes),
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    entity: str
    invariant: str
    message: str
    step: int | None = None

    def __str__(self) -> str:
        where = "" if self.step is None else f" at step {self.step}"
        return f"{self.entity}: {self.invariant}: {self.message}{where}"


def _first_bad(series: Sequence[float], pred) -> int | None:
    for k, v in enumerate(series):
        if not pred(v):
            return k
    return None


def _check_link(link: LinkParams) -> Iterable[Violation]:
    lid = link.link_id
    for name in ("length", "jam_density", "backward_wave_speed"):
        value = getattr(link, name)
        if not (math.isfinite(value) and value > 0):
            yield Violation(lid, f"{name} > 0", f"{name} = {value}")
    v_min = link.v_min
    if not (math.isfinite(v_min) and v_min > 0):
        yield Violation(lid, "min_desired_speed > 0", f"v_min = {v_min}")
        return
    k = _first_bad(link.speed_profile, lambda v: math.isfinite(v) and v >= v_min)
    if k is not None:
        yield Violation(
            lid, "v_f(k) >= v_min > 0", f"v_f = {link.speed_profile[k]} < v_min = {v_min}", k
        )
    if link.jam_density > 0 and link.backward_wave_speed > 0:
        w, jam = link.backward_wave_speed, link.jam_density
        k = _first_bad(link.speed_profile, lambda v: jam * w * v / (v + w) > 0)
        if k is not None:
            yield Violation(lid, "critical flow > 0", "critical flow not positive", k)
    if link.saturation_flow is not None:
        k = _first_bad(link.saturation_flow, lambda q: math.isfinite(q) and q >= 0)
        if k is not None:
            yield Violation(lid, "saturation_flow >= 0", f"q_sat = {link.saturation_flow[k]}", k)


def _check_node(node: NodeSpec, links: Mapping[str, LinkParams]) -> Iterable[Violation]:
    nid = node.node_id
    for lid in (*node.incoming, *node.outgoing):
        if lid not in links:
            yield Violation(nid, "references existing links", f"unknown link {lid!r}")
    for (j, i), e in node.turning_rates.items():
        if not (0.0 <= e <= 1.0):
            yield Violation(nid, "0 <= e <= 1", f"e[{j},{i}] = {e}")
        if e > 0 and (j not in node.incoming or i not in node.outgoing):
            yield Violation(nid, "turning rate joins node links", f"e[{j},{i}] = {e}")
    for j in node.incoming:
        row = sum(e for (jj, _), e in node.turning_rates.items() if jj == j)
        if abs(row - 1.0) > ROW_SUM_TOL:
            yield Violation(j, "turning rates sum to 1", f"row sum {row:.12g} at node {nid}")
    for j, series in node.green_fraction.items():
        if j not in node.incoming:
            yield Violation(nid, "green fraction on incoming link", f"{j!r} is not incoming")
        k = _first_bad(series, lambda b: 0.0 <= b <= 1.0)
        if k is not None:
            yield Violation(f"{nid}/{j}", "0 <= b <= 1", f"b = {series[k]}", k)
    for cset in node.conflict_sets:
        members = sorted(cset, key=natural_key)
        n = max([len(node.green_fraction.get(j, ())) for j in members] + [1])
        for k in range(n):
            total = sum(node.green(j, k) for j in members)
            if total > 1.0 + CONFLICT_TOL:
                yield Violation(
                    nid,
                    "conflict sum <= 1",
                    f"conflict sum {total:.6g} > 1 for {{{', '.join(members)}}}",
                    k,
                )
                break


def cfl_short_links(s: Scenario) -> list[str]:
    """Links whose fixed-speed queue update would reach ``n_f = 1`` at some step."""
    if not s.dt > 0:
        return []
    return [
        l.link_id
        for l in s.physical_links
        if 0 < l.length <= max(l.speed_profile) * s.dt
    ]


def validate_scenario(s: Scenario) -> list[Violation]:
    """All structural violations of ``s``; empty when the scenario is sound.

    Short links that could drive the fixed-speed queue update below two
    steps are reported through :class:`CflWarning`, not as violations.
    """
    out: list[Violation] = []
    if not (math.isfinite(s.dt) and s.dt > 0):
        out.append(Violation("scenario", "dt > 0", f"dt = {s.dt}"))
    if s.horizon_steps < 1:
        out.append(Violation("scenario", "horizon >= 1", f"horizon = {s.horizon_steps}"))

    links: dict[str, LinkParams] = {}
    for link in s.links:
        if link.link_id in links:
            out.append(Violation(link.link_id, "unique link id", "duplicate"))
        links[link.link_id] = link
        if not link.is_virtual:
            out.extend(_check_link(link))

    node_ids = set()
    upstream: dict[str, list[str]] = {}
    downstream: dict[str, list[str]] = {}
    for node in s.nodes:
        if node.node_id in node_ids:
            out.append(Violation(node.node_id, "unique node id", "duplicate"))
        node_ids.add(node.node_id)
        out.extend(_check_node(node, links))
        for j in node.incoming:
            downstream.setdefault(j, []).append(node.node_id)
        for i in node.outgoing:
            upstream.setdefault(i, []).append(node.node_id)

    for lid, link in links.items():
        n_up, n_down = len(upstream.get(lid, [])), len(downstream.get(lid, []))
        want_up = 0 if link.kind is LinkKind.ORIGIN else 1
        want_down = 0 if link.kind is LinkKind.SINK else 1
        if n_up != want_up:
            out.append(Violation(lid, "upstream node count", f"{n_up} != {want_up}"))
        if n_down != want_down:
            out.append(Violation(lid, "downstream node count", f"{n_down} != {want_down}"))

    for origin, rates in s.demand.items():
        if origin not in links or links[origin].kind is not LinkKind.ORIGIN:
            out.append(Violation(origin, "demand on origin link", "not an origin"))
        k = _first_bad(rates, lambda r: math.isfinite(r) and r >= 0)
        if k is not None:
            out.append(Violation(origin, "demand >= 0", f"rate = {rates[k]}", k))

    for seg in s.segments:
        for problem in seg.check():
            out.append(Violation(seg.segment_id, "road segment", problem))

    short = cfl_short_links(s)
    if short:
        warnings.warn(
            f"{len(short)} link(s) are crossed within one step at free-flow speed "
            f"({', '.join(short)}); their queue inflow uses the time-varying-speed update",
            CflWarning,
            stacklevel=2,
        )
    return out
