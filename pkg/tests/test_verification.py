import math

import numpy as np
import pytest

from lqm.node import NodeStepProblem
from lqm.scenarios import build_paper_intersection, build_single_link
from lqm.verification import CflReport, holding_free, oracle_node, oracle_single_link, property_cfl

from conftest import make_link


class TestSingleLinkOracle:
    def test_free_flow_pulse(self):
        # 500 m at 11 m/s: a parcel entering at state 1 has covered 550 m after five moves
        entries = [0.0, 3.0] + [3.0] * 10
        n_in, n_qu, n_out = oracle_single_link(entries, make_link(), [100.0] * 11, 10.0)
        assert list(n_out[:6]) == [0.0] * 6
        assert n_out[6] == 3.0
        assert n_qu[5] == 3.0 and n_qu[4] == 0.0

    def test_budget_limits_discharge(self):
        entries = [0.0, 10.0] + [10.0] * 12
        # 100 m is crossed within the step that starts at state 1
        _, _, n_out = oracle_single_link(entries, make_link(length=100.0), [2.0] * 13, 10.0)
        np.testing.assert_allclose(n_out[:9], [0, 0, 2, 4, 6, 8, 10, 10, 10])

    def test_queue_tail_catches_parcels_early(self):
        # the 45-vehicle parcel reaches the stop line after five moves and, with
        # nothing discharged, the queue reaches back to 50 m from the entrance;
        # the next parcel has covered 440 m by then and joins in the same step
        entries = [0.0, 45.0, 46.0] + [46.0] * 5
        _, n_qu, _ = oracle_single_link(entries, make_link(), [0.0] * 7, 10.0)
        assert n_qu[4] == 0.0
        assert n_qu[5] == 46.0


class TestNodeOracle:
    supplies = {"c": 300.0}
    rates = {("a", "c"): 1.0, ("b", "c"): 1.0}
    demands = {"a": 220.0, "b": 200.0}

    def test_order_matters(self):
        assert oracle_node(self.supplies, self.demands, self.rates, ["a", "b"]) == {"a": 220.0, "b": 80.0}
        assert oracle_node(self.supplies, self.demands, self.rates, ["b", "a"]) == {"a": 100.0, "b": 200.0}

    def test_holding_free(self):
        p = NodeStepProblem(self.supplies, self.demands, self.rates)
        assert holding_free(p, {"a": 220.0, "b": 80.0})
        assert not holding_free(p, {"a": 150.0, "b": 80.0})

    def test_infinite_supply(self):
        assert oracle_node({"d": math.inf}, {"a": 5.0}, {("a", "d"): 1.0}, ["a"]) == {"a": 5.0}


class TestCflProperty:
    def test_intersection_through_turns(self):
        report = property_cfl(build_paper_intersection(horizon_s=100))
        assert report.links == ["2", "5", "8", "11", "14", "17", "20", "23"]
        assert {n for _, _, n in report.entries} == {1}
        assert report.branch == "time-varying"

    def test_long_link_is_clean(self):
        assert property_cfl(build_single_link()).entries == []

    def test_queue_shortens_free_part(self):
        s = build_single_link(horizon_s=30)
        report = property_cfl(s, {"1": [0.0, 400.0, 450.0]})
        assert report == CflReport([("1", 1, 1), ("1", 2, 1)])
