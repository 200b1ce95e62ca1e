"""Network loading loop.

Each step ``k`` runs in three phases over a frozen step-``k`` snapshot:

1. every physical link updates its queue (density, inflow, length) and
   computes how much it could accept (inflow limit) and release (outflow
   bounds);
2. every node allocates its outgoing links' supply over its feeders;
3. the node results are committed as ``N_in(k+1)`` and ``N_out(k+1)``.

Origins and sinks are virtual links. An origin accumulates demand in a
backlog and offers all of it to its node; a sink accepts anything.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import link as ld
from .io import TraceSet
from .network import LinkKind, LinkParams, Scenario, at, natural_key
from .node import NodeStepProblem, allocate

log = logging.getLogger(__name__)

ORDER_TOL = 1e-9
CONSERVATION_TOL = 1e-6


class InvariantError(RuntimeError):
    def __init__(self, entity: str, step: int, message: str):
        super().__init__(f"{entity}: {message} at step {step}")
        self.entity = entity
        self.step = step


@dataclass
class _LinkStep:
    rho_q: float
    n_qu: float
    l_q: float
    n_in_max: float
    n_out_max: float


@dataclass
class SimulationState:
    step: int
    records: dict[str, ld.LinkRecord]

    @property
    def origin_backlog(self) -> dict[str, float]:
        k = self.step
        return {
            lid: float(r.cum_in[k] - r.cum_out[k])
            for lid, r in self.records.items()
            if r.params.kind is LinkKind.ORIGIN
        }


def _speed_array(params: LinkParams, n: int) -> np.ndarray:
    return np.array([at(params.speed_profile, t) for t in range(n)], dtype=float)


class Engine:
    """Runs a validated scenario step by step.

    ``parallel=True`` evaluates the per-link and per-node phases on a thread
    pool; results are committed in a fixed order so traces are identical to
    the serial run.
    """

    def __init__(
        self,
        scenario: Scenario,
        *,
        parallel: bool = False,
        workers: int | None = None,
        strategy: str = "priority",
        check: bool = True,
    ):
        self.scenario = scenario
        self.dt = scenario.dt
        self.horizon = scenario.horizon_steps
        self.strategy = strategy
        self.check = check
        self.parallel = parallel
        self.workers = workers
        n = self.horizon + 1
        self.records = {
            l.link_id: ld.LinkRecord.empty(l, self.horizon)
            for l in sorted(scenario.links, key=lambda l: natural_key(l.link_id))
        }
        self.physical = [lid for lid, r in self.records.items() if not r.params.is_virtual]
        self.origins = [lid for lid, r in self.records.items() if r.params.kind is LinkKind.ORIGIN]
        self.sinks = [lid for lid, r in self.records.items() if r.params.kind is LinkKind.SINK]
        self._speeds = {lid: _speed_array(self.records[lid].params, n) for lid in self.physical}
        self._downstream = {j: node for node in scenario.nodes for j in node.incoming}
        self.nodes = sorted(scenario.nodes, key=lambda nd: natural_key(nd.node_id))
        self._demand = {
            o: np.array([at(scenario.demand.get(o, (0.0,)), t) for t in range(n)], dtype=float)
            for o in self.origins
        }
        self.k = 0
        self._pool = ThreadPoolExecutor(max_workers=workers) if parallel else None

    # -- phase 1 -----------------------------------------------------------

    def _link_phase(self, lid: str) -> _LinkStep:
        rec = self.records[lid]
        p = rec.params
        k, dt = self.k, self.dt
        fd = ld.fd_point(p, k)
        rho_q = ld.queue_density(fd, p.jam_density, rec.q_out_last(k, dt))
        table = ld.travel_distance_table(self._speeds[lid], p.v_min, p.length, dt, k)
        rec.queue_density[k] = rho_q
        n_qu = ld.queue_inflow(rec, table, rho_q, k)
        rec.cum_queue[k] = n_qu
        l_q, l_f = ld.queue_lengths(rec, k)
        n_in_max, _ = ld.inflow_limit(rec, l_q, l_f, rho_q, p.backward_wave_speed, dt, k)
        q_sat = at(p.saturation_flow, k) if p.saturation_flow is not None else fd.critical_flow
        node = self._downstream.get(lid)
        b = node.green(lid, k) if node is not None else 1.0
        _, n_out_max, _ = ld.outflow_bounds(rec, table, q_sat, b, dt, k)
        return _LinkStep(rho_q, n_qu, l_q, n_in_max, n_out_max)

    # -- phase 2 -----------------------------------------------------------

    def _node_problem(self, node, bounds: dict[str, _LinkStep]) -> NodeStepProblem:
        k, dt = self.k, self.dt
        supplies = {}
        for i in node.outgoing:
            rec = self.records[i]
            if rec.params.kind is LinkKind.SINK:
                supplies[i] = math.inf
            else:
                supplies[i] = max(0.0, bounds[i].n_in_max - rec.n_in(k))
        demands = {}
        for j in node.incoming:
            rec = self.records[j]
            if rec.params.kind is LinkKind.ORIGIN:
                demands[j] = max(0.0, rec.n_in(k + 1) - rec.n_out(k))
            else:
                demands[j] = max(0.0, bounds[j].n_out_max - rec.n_out(k))
        return NodeStepProblem(supplies, demands, dict(node.turning_rates), node.node_id)

    def _solve(self, node, bounds):
        return allocate(self._node_problem(node, bounds), self.strategy)

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    # -- driver ------------------------------------------------------------

    def step(self) -> SimulationState:
        k, dt = self.k, self.dt
        if k >= self.horizon:
            raise RuntimeError("horizon reached")
        for o in self.origins:
            rec = self.records[o]
            rec.cum_in[k + 1] = rec.cum_in[k] + self._demand[o][k] * dt

        results = self._map(self._link_phase, self.physical)
        bounds = dict(zip(self.physical, results))
        solutions = self._map(lambda nd: self._solve(nd, bounds), self.nodes)

        for lid in self.sinks:
            self.records[lid].cum_out[k + 1] = self.records[lid].cum_out[k]
        for node, sol in zip(self.nodes, solutions):
            for j, inc in sol.outflow.items():
                rec = self.records[j]
                rec.cum_out[k + 1] = rec.cum_out[k] + inc
            for i, inc in sol.inflow.items():
                rec = self.records[i]
                rec.cum_in[k + 1] = rec.cum_in[k] + inc
        for lid in self.sinks:
            r = self.records[lid]
            r.cum_out[k + 1] = r.cum_in[k + 1]
        for lid in self.physical:
            bl = bounds[lid]
            self.records[lid].queue_length[k] = bl.l_q

        if self.check:
            self._check(k)
        self.k = k + 1
        return SimulationState(self.k, self.records)

    def _check(self, k: int) -> None:
        for lid in self.physical:
            r = self.records[lid]
            n_in, n_qu, n_out = r.cum_in, r.cum_queue, r.cum_out
            if n_in[k + 1] < n_in[k] - ORDER_TOL or n_out[k + 1] < n_out[k] - ORDER_TOL:
                raise InvariantError(lid, k, "cumulative curve decreased")
            if k > 0 and n_qu[k] < n_qu[k - 1] - ORDER_TOL:
                raise InvariantError(lid, k, "queue inflow decreased")
            if not (n_out[k] - ORDER_TOL <= n_qu[k] <= n_in[k] + ORDER_TOL):
                raise InvariantError(lid, k, "N_out <= N_qu <= N_in violated")
            if n_out[k + 1] > n_in[k + 1] + ORDER_TOL:
                raise InvariantError(lid, k + 1, "N_out exceeds N_in")
            if not (0.0 <= r.queue_length[k] <= r.params.length):
                raise InvariantError(lid, k, "queue length out of range")
        injected = sum(self.records[o].cum_in[k + 1] for o in self.origins)
        held = sum(self.records[o].cum_in[k + 1] - self.records[o].cum_out[k + 1] for o in self.origins)
        on_links = sum(self.records[l].cum_in[k + 1] - self.records[l].cum_out[k + 1] for l in self.physical)
        absorbed = sum(self.records[s].cum_in[k + 1] for s in self.sinks)
        gap = injected - held - on_links - absorbed
        if abs(gap) > CONSERVATION_TOL:
            raise InvariantError("network", k + 1, f"conservation gap {gap:.3g} veh")

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def run(self) -> TraceSet:
        try:
            while self.k < self.horizon:
                self.step()
        finally:
            self.close()
        return self.trace()

    def trace(self) -> TraceSet:
        h, dt = self.k, self.dt
        ids = self.physical
        data = {q: np.zeros((h, len(ids))) for q in TraceSet.QUANTITIES}
        for c, lid in enumerate(ids):
            r = self.records[lid]
            data["N_in"][:, c] = r.cum_in[:h]
            data["N_qu"][:, c] = r.cum_queue[:h]
            data["N_out"][:, c] = r.cum_out[:h]
            data["q_in"][:, c] = np.diff(r.cum_in[: h + 1]) / dt
            data["q_out"][:, c] = np.diff(r.cum_out[: h + 1]) / dt
            data["L_q"][:, c] = r.queue_length[:h]
            data["rho_q"][:, c] = r.queue_density[:h]
        return TraceSet(dt, tuple(ids), data)


def run(scenario: Scenario, **kwargs) -> TraceSet:
    """Run ``scenario`` to its horizon and return the trace."""
    return Engine(scenario, **kwargs).run()
