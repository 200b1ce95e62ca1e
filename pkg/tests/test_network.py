import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqm.network import (
    CflWarning,
    LinkKind,
    LinkParams,
    NodeSpec,
    Scenario,
    at,
    build_segment,
    natural_key,
    validate_scenario,
)
from lqm.scenarios import build_paper_corridor, build_paper_intersection

from conftest import make_link, single_link_scenario

SPEEDS = {"L": 4.0, "T": 11.0, "R": 4.0}
RATES = {"L": 0.3, "T": 0.6, "R": 0.1}


class TestSeries:
    def test_last_value_extension(self):
        assert at((1.0, 2.0, 3.0), 10) == 3.0
        assert at((1.0, 2.0, 3.0), 1) == 2.0

    def test_natural_order(self):
        assert sorted(["10", "2", "1"], key=natural_key) == ["1", "2", "10"]
        assert sorted(["a.10", "a.9"], key=natural_key) == ["a.9", "a.10"]


class TestBuildSegment:
    def test_dedicated_lanes(self):
        seg = build_segment("W", 600.0, "L|T|R", 100.0, RATES, turn_speeds=SPEEDS)
        lengths = {l.link_id: l.length for l in seg.links}
        assert lengths == {"W.C": 500.0, "W.L": 100.0, "W.T": 100.0, "W.R": 100.0}
        assert seg.turn_links == ("W.L", "W.T", "W.R")
        assert seg.divider_node.turning_rates == {("W.C", "W.L"): 0.3, ("W.C", "W.T"): 0.6, ("W.C", "W.R"): 0.1}
        assert all(len(mix) == 1 and list(mix.values()) == [1.0] for mix in seg.movements.values())
        assert seg.check() == []

    def test_turn_speeds_follow_movement(self):
        seg = build_segment("W", 600.0, "L|T|R", 100.0, RATES, turn_speeds=SPEEDS)
        speeds = {l.link_id: l.speed_profile for l in seg.links}
        assert speeds["W.L"] == (4.0,) and speeds["W.T"] == (11.0,)

    def test_no_turn_lanes(self):
        seg = build_segment("X", 600.0, "", 100.0, {}, turn_speeds=SPEEDS)
        assert [l.length for l in seg.links] == [600.0]
        assert seg.turn_links == () and seg.divider_node is None

    def test_shared_lane_splits_through_flow(self):
        seg = build_segment("S", 600.0, "L|T|TR", 100.0, RATES, turn_speeds=SPEEDS)
        rates = seg.divider_node.turning_rates
        assert rates[("S.C", "S.L")] == pytest.approx(0.3)
        assert rates[("S.C", "S.T")] == pytest.approx(0.3)
        assert rates[("S.C", "S.TR")] == pytest.approx(0.4)
        assert seg.movements["S.TR"] == pytest.approx({"T": 0.75, "R": 0.25})
        # a shared lane runs at the slower of its movements
        assert next(l for l in seg.links if l.link_id == "S.TR").speed_profile == (4.0,)

    def test_lane_split_override(self):
        seg = build_segment("S", 600.0, "L|T|TR", 100.0, RATES, turn_speeds=SPEEDS, lane_split={"T": [0.2, 0.8]})
        assert seg.divider_node.rate("S.C", "S.T") == pytest.approx(0.12)
        assert seg.divider_node.rate("S.C", "S.TR") == pytest.approx(0.58)

    def test_nested_bay(self):
        # (L)|L|TR: a 50 m left bay inside a 100 m turn zone of a 600 m segment
        seg = build_segment("N", 600.0, "(L)|L|TR", 100.0, RATES, turn_speeds=SPEEDS, bay_length=50.0)
        lengths = {l.link_id: l.length for l in seg.links}
        assert lengths == {"N.C": 500.0, "N.TR": 100.0, "N.Lc": 50.0, "N.(L)": 50.0, "N.L": 50.0}
        outer, inner = seg.nodes
        assert outer.turning_rates == pytest.approx({("N.C", "N.TR"): 0.7, ("N.C", "N.Lc"): 0.3})
        assert inner.incoming == ("N.Lc",)
        assert inner.turning_rates == pytest.approx({("N.Lc", "N.(L)"): 0.5, ("N.Lc", "N.L"): 0.5})

    def test_nested_paths_conserve_length(self):
        seg = build_segment("N", 600.0, "(L)|L|TR", 100.0, RATES, turn_speeds=SPEEDS, bay_length=50.0)
        lengths = {l.link_id: l.length for l in seg.links}
        for path in (["N.C", "N.TR"], ["N.C", "N.Lc", "N.L"], ["N.C", "N.Lc", "N.(L)"]):
            assert sum(lengths[l] for l in path) == 600.0

    def test_duplicate_tokens_are_numbered(self):
        seg = build_segment("E", 600.0, "L|T|T|R", 100.0, RATES, turn_speeds=SPEEDS)
        assert seg.turn_links == ("E.L", "E.T1", "E.T2", "E.R")
        assert seg.divider_node.rate("E.C", "E.T1") == pytest.approx(0.3)

    def test_custom_ids(self):
        seg = build_segment("W", 600.0, "L|T|R", 100.0, RATES, turn_speeds=SPEEDS, link_ids={"C": "25", "L": "1"})
        assert seg.common_link == "25" and "1" in seg.turn_links

    @pytest.mark.parametrize("turn_length", [600.0, 700.0, 0.0])
    def test_turn_length_must_fit(self, turn_length):
        with pytest.raises(ValueError, match="turn length"):
            build_segment("W", 600.0, "L|T|R", turn_length, RATES, turn_speeds=SPEEDS)

    @pytest.mark.parametrize("lanes", ["L|X|R", "L||R", "LL|T|R", "L|T|R)"])
    def test_unknown_tokens(self, lanes):
        with pytest.raises(ValueError, match="unknown configuration token"):
            build_segment("W", 600.0, lanes, 100.0, RATES, turn_speeds=SPEEDS)

    def test_unserved_movement(self):
        with pytest.raises(ValueError, match="no lane serves"):
            build_segment("W", 600.0, "L|T", 100.0, RATES, turn_speeds=SPEEDS)

    @settings(max_examples=60, deadline=None)
    @given(
        total=st.floats(50.0, 2000.0),
        frac=st.floats(0.05, 0.95),
        lanes=st.sampled_from(["L|T|R", "L|TR", "LT|R", "LTR", "L|T|TR", "(L)|L|TR", "L|T|(R)|R"]),
    )
    def test_every_path_has_segment_length(self, total, frac, lanes):
        turn = total * frac
        seg = build_segment("P", total, lanes, turn, RATES, turn_speeds=SPEEDS, bay_length=turn / 2)
        lengths = {l.link_id: l.length for l in seg.links}
        downstream = {}
        for node in seg.nodes:
            for j in node.incoming:
                downstream[j] = node.outgoing

        def walk(link):
            nxt = downstream.get(link)
            if not nxt:
                return [lengths[link]]
            return [lengths[link] + rest for o in nxt for rest in walk(o)]

        assert walk(seg.common_link) == pytest.approx([total] * len(seg.turn_links))


class TestValidation:
    def test_paper_intersection_is_valid(self):
        assert validate_scenario(build_paper_intersection()) == []

    def test_bottleneck_and_corridor_valid(self):
        assert validate_scenario(build_paper_intersection(bottleneck=True)) == []
        assert validate_scenario(build_paper_corridor()) == []

    def test_row_sum(self):
        s = single_link_scenario()
        nodes = list(s.nodes)
        nodes[1] = NodeSpec("z", ("1",), ("d",), {("1", "d"): 0.9})
        v = validate_scenario(Scenario(s.links, tuple(nodes), s.demand, s.dt, s.horizon_steps))
        assert len(v) == 1
        assert v[0].entity == "1" and "sum to 1" in v[0].invariant

    def test_conflict_sum(self):
        links = (
            LinkParams.origin("o1"), LinkParams.origin("o2"),
            make_link(link_id="a"), make_link(link_id="b"),
            LinkParams.sink("d"),
        )
        nodes = (
            NodeSpec("n1", ("o1",), ("a",), {("o1", "a"): 1.0}),
            NodeSpec("n2", ("o2",), ("b",), {("o2", "b"): 1.0}),
            NodeSpec("x", ("a", "b"), ("d",), {("a", "d"): 1.0, ("b", "d"): 1.0}, {"a": 0.6, "b": 0.6}, [{"a", "b"}]),
        )
        v = validate_scenario(Scenario(links, nodes, {}, 10.0, 5))
        assert len(v) == 1
        assert str(v[0]) == "x: conflict sum <= 1: conflict sum 1.2 > 1 for {a, b} at step 0"

    def test_conflict_reports_first_offending_step(self):
        links = (LinkParams.origin("o"), make_link(link_id="a"), make_link(link_id="b"), LinkParams.sink("d"))
        nodes = (
            NodeSpec("n", ("o",), ("a", "b"), {("o", "a"): 0.5, ("o", "b"): 0.5}),
            NodeSpec("x", ("a", "b"), ("d",), {("a", "d"): 1.0, ("b", "d"): 1.0},
                     {"a": (0.5, 0.5, 0.7), "b": 0.5}, [{"a", "b"}]),
        )
        (v,) = validate_scenario(Scenario(links, nodes, {}, 10.0, 5))
        assert v.step == 2

    def test_speed_below_minimum(self):
        s = single_link_scenario()
        bad = LinkParams("1", LinkKind.COMMON, length=500.0, speed_profile=(11.0, 2.0), min_desired_speed=3.0)
        v = validate_scenario(Scenario((s.links[0], bad, s.links[2]), s.nodes, s.demand, 10.0, 5))
        assert [(x.entity, x.step) for x in v] == [("1", 1)]

    def test_nonpositive_geometry(self):
        s = single_link_scenario()
        bad = LinkParams("1", LinkKind.COMMON, length=-1.0, jam_density=0.0, speed_profile=(11.0,))
        v = validate_scenario(Scenario((s.links[0], bad, s.links[2]), s.nodes, s.demand, 10.0, 5))
        assert {x.invariant for x in v} == {"length > 0", "jam_density > 0"}

    def test_dangling_link(self):
        s = single_link_scenario()
        extra = make_link(link_id="2")
        v = validate_scenario(Scenario(s.links + (extra,), s.nodes, s.demand, 10.0, 5))
        assert {(x.entity, x.invariant) for x in v} == {("2", "upstream node count"), ("2", "downstream node count")}

    def test_bad_scalars_and_demand(self):
        s = single_link_scenario(demand=-0.1)
        v = validate_scenario(Scenario(s.links, s.nodes, s.demand, 0.0, 0))
        assert {x.invariant for x in v} == {"dt > 0", "horizon >= 1", "demand >= 0"}

    def test_cfl_warning(self):
        s = single_link_scenario(length=100.0, speed=11.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", CflWarning)
            assert validate_scenario(s) == []
        assert len(caught) == 1 and "(1)" in str(caught[0].message)

    def test_pure(self):
        s = build_paper_intersection(bottleneck=True)
        assert validate_scenario(s) == validate_scenario(s)


class TestScenarioOverrides:
    def test_resample_keeps_duration(self):
        s = single_link_scenario(demand=[0.1, 0.2], horizon=20)
        t = s.with_overrides(dt=5.0)
        assert t.horizon_steps == 40
        assert t.demand["o"] == (0.1, 0.1, 0.2, 0.2)

    def test_horizon_only(self):
        assert single_link_scenario().with_overrides(horizon_steps=7).horizon_steps == 7
