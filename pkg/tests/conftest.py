import warnings

import numpy as np
import pytest

from lqm.link import LinkRecord
from lqm.network import CflWarning, LinkKind, LinkParams, NodeSpec, Scenario

# Table-2 style link constants
W = 50.0 / 9.0  # 20 km/h in m/s
JAM = 0.1  # 100 veh/km in veh/m


@pytest.fixture(autouse=True)
def _quiet_cfl():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CflWarning)
        yield


def make_link(length=500.0, speed=11.0, link_id="1", **kw):
    profile = speed if isinstance(speed, (list, tuple)) else (speed,)
    return LinkParams(link_id, LinkKind.COMMON, length=length, speed_profile=profile, **kw)


def make_record(n_in, n_out=None, n_qu=None, rho=None, **link_kw):
    """LinkRecord whose first len(n_in) states are filled from the given lists."""
    params = make_link(**link_kw)
    h = len(n_in) + 5
    rec = LinkRecord.empty(params, h)
    rec.cum_in[: len(n_in)] = n_in
    if n_out is not None:
        rec.cum_out[: len(n_out)] = n_out
    if n_qu is not None:
        rec.cum_queue[: len(n_qu)] = n_qu
    if rho is not None:
        rec.queue_density[:] = rho
    return rec


def single_link_scenario(length=500.0, speed=11.0, demand=0.2, horizon=60, green=None, dt=10.0):
    link = make_link(length, speed)
    exit_green = {} if green is None else {"1": green}
    return Scenario(
        (LinkParams.origin("o"), link, LinkParams.sink("d")),
        (
            NodeSpec("a", ("o",), ("1",), {("o", "1"): 1.0}),
            NodeSpec("z", ("1",), ("d",), {("1", "d"): 1.0}, exit_green),
        ),
        {"o": demand if isinstance(demand, (list, tuple)) else (demand,)},
        dt,
        horizon,
        name="single",
    )


def as_array(x):
    return np.asarray(x, dtype=float)
