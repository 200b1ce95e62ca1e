"""Built-in benchmark scenarios.

Every builder drives its origins with :func:`trapezoid_demand`, a warm-up
plateau that ramps to a peak and then decays linearly to zero. The corridor
uses representative link lengths (480 m external, 380 m internal segments,
80 m turn zones).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .network import (
    LinkKind,
    LinkParams,
    NodeSpec,
    RoadSegment,
    Scenario,
    build_segment,
)

DT = 10.0
HORIZON_S = 2000.0

# travel direction -> where each movement leaves to
_EXIT = {
    "W": {"T": "E", "L": "N", "R": "S"},
    "S": {"T": "N", "L": "W", "R": "E"},
    "E": {"T": "W", "L": "S", "R": "N"},
    "N": {"T": "S", "L": "E", "R": "W"},
}
_OPPOSITE = {"W": "E", "E": "W", "S": "N", "N": "S"}

Row = Mapping[str, tuple[float, float]]  # movement -> (turning rate, green fraction)


def trapezoid_demand(
    base: float,
    peak: float,
    dt: float = DT,
    horizon_s: float = HORIZON_S,
    *,
    warmup_end: float = 750.0,
    peak_start: float = 850.0,
    peak_end: float = 1000.0,
    zero_at: float = 1500.0,
) -> tuple[float, ...]:
    """Step-indexed demand rate: ``base`` plateau, ramp, ``peak`` plateau, decay to 0."""
    t = np.arange(round(horizon_s / dt)) * dt
    rate = np.interp(
        t,
        [0.0, warmup_end, peak_start, peak_end, zero_at, max(zero_at, horizon_s) + dt],
        [base, base, peak, peak, 0.0, 0.0],
    )
    return tuple(float(v) for v in rate)


def _segment(
    seg_id: str,
    total: float,
    turn_length: float,
    row: Row,
    *,
    turn_speed: float,
    through_speed: float,
    link_ids: Mapping[str, str] | None = None,
) -> RoadSegment:
    moves = [m for m in "LTR" if m in row]
    return build_segment(
        seg_id,
        total,
        "|".join(moves),
        turn_length,
        {m: row[m][0] for m in moves},
        turn_speeds={"L": turn_speed, "R": turn_speed, "T": through_speed},
        common_speed=through_speed,
        link_ids=link_ids,
    )


def _turn(seg: RoadSegment, move: str) -> str:
    return next(l for l, mix in seg.movements.items() if move in mix)


class _Builder:
    """Collects the network pieces while junctions are wired together."""

    def __init__(self):
        self.links: list[LinkParams] = []
        self.nodes: list[NodeSpec] = []
        self.segments: list[RoadSegment] = []
        self.demand: dict[str, tuple[float, ...]] = {}

    def add_segment(self, seg: RoadSegment) -> RoadSegment:
        self.segments.append(seg)
        self.links.extend(seg.links)
        self.nodes.extend(seg.nodes)
        return seg

    def origin(self, origin_id: str, seg: RoadSegment, rates) -> None:
        self.links.append(LinkParams.origin(origin_id))
        self.nodes.append(NodeSpec(f"{origin_id}.node", (origin_id,), (seg.common_link,), {(origin_id, seg.common_link): 1.0}))
        self.demand[origin_id] = tuple(rates)

    def sink(self, sink_id: str, seg: RoadSegment, row: Row) -> None:
        self.links.append(LinkParams.sink(sink_id))
        turns = {m: _turn(seg, m) for m in row}
        conflict = tuple(turns[m] for m in ("T", "L") if m in turns)
        self.nodes.append(
            NodeSpec(
                f"{sink_id}.node",
                tuple(seg.turn_links),
                (sink_id,),
                {(l, sink_id): 1.0 for l in seg.turn_links},
                {turns[m]: (row[m][1],) for m in row},
                (frozenset(conflict),) if len(conflict) > 1 else (),
            )
        )

    def junction(
        self,
        node_id: str,
        approaches: Mapping[str, tuple[RoadSegment, Row]],
        exits: Mapping[str, RoadSegment],
        conflicts: list[list[tuple[str, str]]],
    ) -> None:
        incoming, rates, green = [], {}, {}
        for arm, (seg, row) in approaches.items():
            for m, (_, b) in row.items():
                link = _turn(seg, m)
                incoming.append(link)
                rates[(link, exits[_EXIT[arm][m]].common_link)] = 1.0
                green[link] = (b,)
        csets = tuple(
            frozenset(_turn(approaches[arm][0], m) for arm, m in group) for group in conflicts
        )
        outgoing = tuple(seg.common_link for seg in exits.values())
        self.nodes.append(NodeSpec(node_id, tuple(incoming), outgoing, rates, green, csets))

    def scenario(self, name: str, dt: float, horizon_s: float) -> Scenario:
        return Scenario(
            tuple(self.links), tuple(self.nodes), self.demand, dt, round(horizon_s / dt), tuple(self.segments), name
        )


# ---------------------------------------------------------------------------
# Four-arm intersection
# ---------------------------------------------------------------------------

INTERSECTION_ROWS: dict[str, dict[str, tuple[float, float]]] = {
    "W": {"T": (0.6, 0.38), "L": (0.3, 0.15), "R": (0.1, 1.0)},
    "S": {"T": (0.4, 0.23), "L": (0.1, 0.15), "R": (0.5, 1.0)},
    "E": {"T": (0.6, 0.38), "L": (0.3, 0.15), "R": (0.1, 1.0)},
    "N": {"T": (0.5, 0.23), "L": (0.4, 0.15), "R": (0.1, 1.0)},
}

_ARMS = ("W", "S", "E", "N")
_IN_TURN_IDS = {arm: {m: str(3 * n + 1 + "LTR".index(m)) for m in "LTR"} for n, arm in enumerate(_ARMS)}
_OUT_TURN_IDS = {arm: {m: str(13 + 3 * n + "LTR".index(m)) for m in "LTR"} for n, arm in enumerate(_ARMS)}
_IN_COMMON = {arm: str(25 + n) for n, arm in enumerate(_ARMS)}
_OUT_COMMON = {arm: str(29 + n) for n, arm in enumerate(_ARMS)}

#: Default shape-matched demand per approach: (warm-up rate, peak rate) in veh/s.
INTERSECTION_DEMAND = {"W": (0.08, 0.16), "S": (0.06, 0.12), "E": (0.08, 0.16), "N": (0.06, 0.12)}


def _conflicts_four_arm() -> list[list[tuple[str, str]]]:
    return [[(x, "T"), (x, "L"), (y, "T"), (y, "L")] for x in ("W", "E") for y in ("S", "N")]


def build_paper_intersection(
    *,
    bottleneck: bool = False,
    tfs: bool = False,
    demand: Mapping[str, tuple[float, float]] | None = None,
    dt: float = DT,
    horizon_s: float = HORIZON_S,
) -> Scenario:
    """Isolated signalised four-arm intersection with 32 numbered links.

    Turn links 1-12 approach the junction (W, S, E, N; each L, T, R), turn
    links 13-24 end the outgoing segments, common links 25-28 feed the
    approaches and 29-32 leave the junction. Outgoing segment turn links take
    the turning rates and green fractions of the approach they would join
    downstream.

    ``bottleneck`` sets the green fraction of link 20 to 0.1. ``tfs`` gives
    common link 25 a free-flow speed of 11 m/s, dropping to 3 m/s at 500 s
    and recovering to 9 m/s at 900 s.
    """
    b = _Builder()
    rates = demand or INTERSECTION_DEMAND
    turn_speed, through = 4.0, 11.0
    incoming, outgoing = {}, {}
    for arm in _ARMS:
        ids = {"C": _IN_COMMON[arm], **_IN_TURN_IDS[arm]}
        incoming[arm] = b.add_segment(
            _segment(f"{arm}-in", 600.0, 100.0, INTERSECTION_ROWS[arm], turn_speed=turn_speed, through_speed=through, link_ids=ids)
        )
        b.origin(f"o.{arm}", incoming[arm], trapezoid_demand(*rates[arm], dt, horizon_s))
    for arm in _ARMS:
        row = INTERSECTION_ROWS[_OPPOSITE[arm]]
        if bottleneck and arm == "E":
            row = {**row, "T": (row["T"][0], 0.1)}
        ids = {"C": _OUT_COMMON[arm], **_OUT_TURN_IDS[arm]}
        outgoing[arm] = b.add_segment(
            _segment(f"{arm}-out", 600.0, 100.0, row, turn_speed=turn_speed, through_speed=through, link_ids=ids)
        )
        b.sink(f"d.{arm}", outgoing[arm], row)
    b.junction("J", {arm: (incoming[arm], INTERSECTION_ROWS[arm]) for arm in _ARMS}, outgoing, _conflicts_four_arm())

    if tfs:
        n = round(horizon_s / dt)
        profile = tuple(11.0 if k * dt < 500 else 3.0 if k * dt < 900 else 9.0 for k in range(n))
        b.links = [
            LinkParams(l.link_id, l.kind, l.length, l.jam_density, l.backward_wave_speed, profile)
            if l.link_id == "25"
            else l
            for l in b.links
        ]
        seg = b.segments[0]
        b.segments[0] = RoadSegment(
            seg.segment_id, seg.common_link, seg.turn_links, seg.divider_node, seg.movements,
            tuple(next(x for x in b.links if x.link_id == l.link_id) for l in seg.links), seg.nodes,
        )
    name = "paper-intersection" + ("-bottleneck" if bottleneck else "") + ("-tfs" if tfs else "")
    return b.scenario(name, dt, horizon_s)


# ---------------------------------------------------------------------------
# Three-junction corridor
# ---------------------------------------------------------------------------

CORRIDOR_FOUR_ARM: dict[str, dict[str, tuple[float, float]]] = {
    "W": {"T": (0.6, 0.33), "L": (0.3, 0.16), "R": (0.1, 1.0)},
    "E": {"T": (0.6, 0.33), "L": (0.3, 0.16), "R": (0.1, 1.0)},
    "S": {"T": (0.6, 0.25), "L": (0.3, 0.16), "R": (0.1, 1.0)},
    "N": {"T": (0.6, 0.25), "L": (0.3, 0.16), "R": (0.1, 1.0)},
}
CORRIDOR_T_JUNCTION: dict[str, dict[str, tuple[float, float]]] = {
    "W": {"T": (0.8, 0.48), "L": (0.2, 0.22)},
    "E": {"T": (0.6, 0.22), "R": (0.4, 1.0)},
    "N": {"L": (0.6, 0.45), "R": (0.4, 1.0)},
}

#: Representative geometry: external segments 480 m, internal 380 m, 80 m turn zones.
CORRIDOR_EXTERNAL = 480.0
CORRIDOR_INTERNAL = 380.0
CORRIDOR_TURN = 80.0
CORRIDOR_DEMAND = {"W": (0.12, 0.22), "E": (0.12, 0.22), "S": (0.06, 0.12), "N": (0.06, 0.12)}


def build_paper_corridor(*, dt: float = DT, horizon_s: float = HORIZON_S) -> Scenario:
    """Three signalised junctions in series: four-arm, T-junction (no south arm), four-arm.

    Seven origins and seven destinations; 18 common links and 50 turn links.
    """
    b = _Builder()
    seg_kw = dict(turn_speed=6.0, through_speed=11.0)

    def ext_in(j, arm, row):
        seg = b.add_segment(_segment(f"{j}.{arm}-in", CORRIDOR_EXTERNAL, CORRIDOR_TURN, row, **seg_kw))
        b.origin(f"o.{j}.{arm}", seg, trapezoid_demand(*CORRIDOR_DEMAND[arm], dt, horizon_s))
        return seg

    def ext_out(j, arm, row):
        seg = b.add_segment(_segment(f"{j}.{arm}-out", CORRIDOR_EXTERNAL, CORRIDOR_TURN, row, **seg_kw))
        b.sink(f"d.{j}.{arm}", seg, row)
        return seg

    four, tee = CORRIDOR_FOUR_ARM, CORRIDOR_T_JUNCTION
    # internal segments, named by travel direction
    i1_i2 = b.add_segment(_segment("I1-I2", CORRIDOR_INTERNAL, CORRIDOR_TURN, tee["W"], **seg_kw))
    i2_i1 = b.add_segment(_segment("I2-I1", CORRIDOR_INTERNAL, CORRIDOR_TURN, four["E"], **seg_kw))
    i2_i3 = b.add_segment(_segment("I2-I3", CORRIDOR_INTERNAL, CORRIDOR_TURN, four["W"], **seg_kw))
    i3_i2 = b.add_segment(_segment("I3-I2", CORRIDOR_INTERNAL, CORRIDOR_TURN, tee["E"], **seg_kw))

    i1_in = {arm: ext_in("I1", arm, four[arm]) for arm in ("W", "S", "N")}
    i1_out = {arm: ext_out("I1", arm, four[_OPPOSITE[arm]]) for arm in ("W", "S", "N")}
    i2_in_n = ext_in("I2", "N", tee["N"])
    i2_out_n = ext_out("I2", "N", tee["N"])
    i3_in = {arm: ext_in("I3", arm, four[arm]) for arm in ("E", "S", "N")}
    i3_out = {arm: ext_out("I3", arm, four[_OPPOSITE[arm]]) for arm in ("E", "S", "N")}

    b.junction(
        "I1",
        {"W": (i1_in["W"], four["W"]), "S": (i1_in["S"], four["S"]), "E": (i2_i1, four["E"]), "N": (i1_in["N"], four["N"])},
        {"W": i1_out["W"], "S": i1_out["S"], "E": i1_i2, "N": i1_out["N"]},
        _conflicts_four_arm(),
    )
    b.junction(
        "I2",
        {"W": (i1_i2, tee["W"]), "E": (i3_i2, tee["E"]), "N": (i2_in_n, tee["N"])},
        {"W": i2_i1, "E": i2_i3, "N": i2_out_n},
        [[("W", "L"), ("E", "T"), ("N", "L")], [("W", "T"), ("N", "L")]],
    )
    b.junction(
        "I3",
        {"W": (i2_i3, four["W"]), "S": (i3_in["S"], four["S"]), "E": (i3_in["E"], four["E"]), "N": (i3_in["N"], four["N"])},
        {"W": i3_i2, "S": i3_out["S"], "E": i3_out["E"], "N": i3_out["N"]},
        _conflicts_four_arm(),
    )
    return b.scenario("paper-corridor", dt, horizon_s)


def build_single_link(
    *, length: float = 500.0, speed: float = 11.0, rate: float = 0.2, dt: float = DT, horizon_s: float = HORIZON_S
) -> Scenario:
    """One origin, one link, one sink; constant demand."""
    link = LinkParams("1", LinkKind.COMMON, length=length, speed_profile=(speed,))
    links = (LinkParams.origin("o"), link, LinkParams.sink("d"))
    nodes = (
        NodeSpec("n.in", ("o",), ("1",), {("o", "1"): 1.0}),
        NodeSpec("n.out", ("1",), ("d",), {("1", "d"): 1.0}),
    )
    return Scenario(links, nodes, {"o": (rate,)}, dt, round(horizon_s / dt), (), "single-link")


BUILTINS: dict[str, Callable[[], Scenario]] = {
    "paper-intersection": build_paper_intersection,
    "paper-intersection-bottleneck": lambda: build_paper_intersection(bottleneck=True),
    "paper-intersection-tfs": lambda: build_paper_intersection(tfs=True),
    "paper-corridor": build_paper_corridor,
    "single-link": build_single_link,
}


def builtin(name: str) -> Scenario:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown built-in scenario {name!r} (choose from {', '.join(BUILTINS)})") from None
