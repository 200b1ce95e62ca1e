import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lqm.engine import run
from lqm.io import (
    ComparisonReport,
    SchemaError,
    TraceSet,
    compare_traces,
    dump_scenario,
    epsilon,
    load_scenario,
    load_trace,
    scenario_from_dict,
    scenario_to_dict,
    smooth_demand,
    trace_to_csv,
    write_trace,
)
from lqm.network import validate_scenario
from lqm.scenarios import BUILTINS, build_single_link


def minimal(**overrides):
    doc = {
        "schema": 1,
        "name": "tiny",
        "dt": 10,
        "horizon": 30,
        "links": [
            {"id": "o", "kind": "origin"},
            {"id": "1", "length": "0.5 km", "speed": "39.6 km/h", "jam_density": "100 veh/km"},
            {"id": "d", "kind": "sink"},
        ],
        "nodes": [
            {"id": "a", "incoming": ["o"], "outgoing": ["1"], "turning_rates": {"o": {"1": 1}}},
            {"id": "z", "incoming": ["1"], "outgoing": ["d"], "turning_rates": {"1": {"d": 1}}},
        ],
        "demand": {"o": 0.2},
    }
    doc.update(overrides)
    return doc


class TestScenarioReading:
    def test_units(self):
        s = scenario_from_dict(minimal())
        link = s.link("1")
        assert link.length == 500.0
        assert link.speed_profile == (pytest.approx(11.0),)
        assert link.jam_density == pytest.approx(0.1)
        assert validate_scenario(s) == []

    def test_horizon_as_duration(self):
        assert scenario_from_dict(minimal(horizon="2000 s")).horizon_steps == 200

    def test_rejected_rate_unit_names_field(self):
        with pytest.raises(SchemaError) as err:
            scenario_from_dict(minimal(demand={"o": "720 veh/h"}))
        assert err.value.errors == ["demand.o: unit 'veh/h' not accepted for rate (accepted: veh/s)"]

    def test_collects_every_error(self):
        doc = minimal()
        doc["links"][1]["colour"] = "red"
        doc["links"][1]["speed"] = "fast"
        doc["nodes"][0]["turning_rates"] = {"o": {"1": "1 m"}}
        with pytest.raises(SchemaError) as err:
            scenario_from_dict(doc)
        assert err.value.errors == [
            "links[1].colour: unknown key",
            "links[1].speed: cannot read 'fast' as a speed",
            "nodes[0].turning_rates.o.1: unit 'm' not accepted for fraction (accepted: none (plain number))",
        ]

    def test_unsupported_schema(self):
        with pytest.raises(SchemaError, match="unsupported schema 2"):
            scenario_from_dict(minimal(schema=2))

    def test_json_syntax_error_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": 1,\n "dt": 10,,\n}')
        with pytest.raises(SchemaError, match="line 2 column 11"):
            load_scenario(path)

    def test_interval_demand_is_replicated(self):
        s = scenario_from_dict(minimal(demand={"o": {"rate": [0.1, 0.3], "interval": "20 s"}}))
        assert s.demand["o"] == (0.1, 0.1, 0.3, 0.3)

    def test_smoothing_from_file_and_override(self):
        rates = [float(n) for n in range(10)]
        doc = minimal(demand={"o": rates}, smooth_window=5)
        assert scenario_from_dict(doc).demand["o"] == (2.0,) * 5 + (7.0,) * 5
        assert scenario_from_dict(doc, smooth_window=1).demand["o"] == tuple(rates)

    def test_segment_built_from_lanes(self):
        doc = minimal()
        doc["segments"] = [
            {
                "id": "s",
                "length": 300,
                "lanes": "L|T",
                "turn_length": 100,
                "turning_rates": {"L": 0.25, "T": 0.75},
                "turn_speeds": {"L": 6, "T": 11},
            }
        ]
        s = scenario_from_dict(doc)
        assert {l.link_id for l in s.segments[0].links} == {"s.C", "s.L", "s.T"}


class TestSmoothing:
    def test_block_means(self):
        assert smooth_demand([1, 3, 5, 7, 9, 11], 5) == (5.0,) * 5 + (11.0,)

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            smooth_demand([1.0], 0)

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=60), st.integers(1, 12))
    def test_preserves_total(self, series, window):
        assert math.fsum(smooth_demand(series, window)) == pytest.approx(math.fsum(series), abs=1e-9)


class TestScenarioRoundTrip:
    @pytest.mark.parametrize("name", sorted(BUILTINS))
    def test_dump_and_load(self, name, tmp_path):
        original = BUILTINS[name]()
        path = tmp_path / "s.json"
        dump_scenario(original, path)
        loaded = load_scenario(path)
        assert scenario_to_dict(loaded) == scenario_to_dict(original)
        assert validate_scenario(loaded) == []

    def test_loaded_scenario_runs_identically(self, tmp_path):
        original = build_single_link(horizon_s=300)
        dump_scenario(original, tmp_path / "s.json")
        assert run(load_scenario(tmp_path / "s.json")) == run(original)


def tiny_trace(values=None):
    data = {q: np.arange(6, dtype=float).reshape(3, 2) / 3 for q in TraceSet.QUANTITIES}
    if values is not None:
        data["N_in"] = values
    return TraceSet(10.0, ("1", "2"), data)


class TestTraceFiles:
    def test_layout(self):
        text = trace_to_csv(tiny_trace())
        lines = text.splitlines()
        assert lines[0] == "# lqm-trace schema=1 dt=10"
        assert lines[1] == "step,link_id,N_in,N_qu,N_out,q_in,q_out,L_q,rho_q"
        assert lines[2].startswith("0,1,0,0,")
        assert lines[3].split(",")[2] == "0.333333333333"
        assert len(lines) == 2 + 6

    def test_round_trip(self, tmp_path):
        trace = run(build_single_link(horizon_s=400))
        write_trace(trace, tmp_path / "t.csv")
        back = load_trace(tmp_path / "t.csv")
        assert back.link_ids == trace.link_ids
        assert back.allclose(trace, rtol=1e-11, atol=1e-11)
        assert trace_to_csv(back) == trace_to_csv(trace)

    def test_negative_zero_is_written_as_zero(self):
        trace = tiny_trace(np.full((3, 2), -0.0))
        assert "-0" not in trace_to_csv(trace)

    @pytest.mark.parametrize(
        "text,message",
        [
            ("step,link_id\n", "line 1: missing '# lqm-trace'"),
            ("# lqm-trace schema=9 dt=10\n", "unsupported trace schema '9'"),
            ("# lqm-trace schema=1 dt=10\nstep,link\n", "line 2: header"),
            (
                "# lqm-trace schema=1 dt=10\nstep,link_id,N_in,N_qu,N_out,q_in,q_out,L_q,rho_q\n0,1,0,0,0,x,0,0,0\n",
                "line 3: could not convert",
            ),
            (
                "# lqm-trace schema=1 dt=10\nstep,link_id,N_in,N_qu,N_out,q_in,q_out,L_q,rho_q\n1,1,0,0,0,0,0,0,0\n",
                "not contiguous",
            ),
        ],
    )
    def test_load_errors(self, tmp_path, text, message):
        path = tmp_path / "t.csv"
        path.write_text(text)
        with pytest.raises(ValueError, match=message):
            load_trace(path)


series = arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3))


class TestEpsilon:
    def test_value(self):
        assert epsilon([0, 0, 0, 0], [1, -1, 1, -1]) == 1.0
        assert epsilon([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2))

    @given(series)
    def test_zero_on_identical(self, x):
        assert epsilon(x, x) == 0.0

    @given(series, st.floats(-100, 100))
    def test_constant_offset(self, x, c):
        assert epsilon(x, x + c) == pytest.approx(abs(c), rel=1e-9, abs=1e-9)

    @settings(max_examples=50)
    @given(st.integers(1, 20).flatmap(lambda n: st.tuples(*[arrays(np.float64, n, elements=st.floats(-1e3, 1e3))] * 2)))
    def test_symmetric(self, pair):
        x, y = pair
        assert epsilon(x, y) == epsilon(y, x)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            epsilon([1, 2], [1, 2, 3])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            epsilon([], [])


class TestCompare:
    def test_self_comparison_is_zero(self):
        trace = tiny_trace()
        report = compare_traces(trace, trace)
        assert report.mean("N_in") == 0.0 and report.std("N_out") == 0.0

    def test_report_table(self):
        a = tiny_trace()
        b = tiny_trace(a.data["N_in"] + np.array([[1.0, 3.0]]))
        report = compare_traces(a, b, ("N_in",))
        assert report.values == pytest.approx({("1", "N_in"): 1.0, ("2", "N_in"): 3.0})
        assert report.to_csv({"1": "north", "2": "east"}).splitlines() == [
            "group,link_id,eps_N_in",
            "east,2,3",
            "north,1,1",
            ",mean,2",
            ",std,1",
        ]

    def test_grid_mismatch(self):
        a = tiny_trace()
        b = TraceSet(5.0, a.link_ids, a.data)
        with pytest.raises(ValueError, match="trace grids differ"):
            compare_traces(a, b)

    def test_unknown_quantity(self):
        with pytest.raises(ValueError, match="unknown quantity"):
            compare_traces(tiny_trace(), tiny_trace(), ("speed",))

    def test_report_type(self):
        assert isinstance(compare_traces(tiny_trace(), tiny_trace()), ComparisonReport)
