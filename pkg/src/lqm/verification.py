"""Independent reference implementations used by the test suite.

Nothing here imports the link or node dynamics; each oracle recomputes the
behaviour from first principles so a shared bug cannot hide.

* :func:`oracle_single_link` moves parcels of entering vehicles along a
  link into a FIFO queue whose tail is set by the vehicles queued ahead.
  The queue discharges under a per-step budget.
* :func:`oracle_node` is the greedy node allocation under an explicit
  feeder order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import LinkParams, Scenario, at, natural_key


@dataclass
class _Parcel:
    mass: float
    pos: float = 0.0
    queued: bool = False


@dataclass
class PointQueueOracle:
    """Parcel-by-parcel single-link simulator.

    ``entries[s]`` is the cumulative entry count at state ``s``; the parcel
    ``entries[s] - entries[s-1]`` starts at the upstream end and advances
    ``v_f(t) * dt`` in every step ``t >= s``.
    """

    params: LinkParams
    entries: Sequence[float]
    budgets: Sequence[float]
    dt: float
    parcels: list[_Parcel] = field(default_factory=list)

    def _queue_density(self, q_out: float, k: int) -> float:
        v = at(self.params.speed_profile, k)
        w, jam = self.params.backward_wave_speed, self.params.jam_density
        # congested branch of the triangular diagram: q = w * (jam - rho)
        rho_cr = jam * w / (v + w)
        q_cr = v * rho_cr
        if q_out >= q_cr:
            return rho_cr
        return rho_cr + (jam - rho_cr) * (1.0 - q_out / q_cr)

    def run(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = len(self.entries) - 1
        n_in = np.asarray(self.entries, dtype=float)
        n_qu = np.zeros(h + 1)
        n_out = np.zeros(h + 1)
        length = self.params.length
        joined = 0.0
        for k in range(h):
            # parcels of state k exist from now on; everybody moves
            if k >= 1:
                self.parcels.append(_Parcel(n_in[k] - n_in[k - 1]))
            v = at(self.params.speed_profile, k)
            for p in self.parcels:
                p.pos += v * self.dt
            q_prev = (n_out[k] - n_out[k - 1]) / self.dt if k >= 1 else 0.0
            rho = self._queue_density(q_prev, k)
            for p in self.parcels:
                if p.queued:
                    continue
                tail = length - min(max((joined - n_out[k]) / rho, 0.0), length)
                if p.pos > tail:
                    p.queued = True
                    joined += p.mass
                else:
                    break
            n_qu[k] = min(max(joined, n_out[k]), n_in[k])
            arrived = sum(p.mass for p in self.parcels if p.pos > length)
            n_out[k + 1] = max(n_out[k], min(n_out[k] + self.budgets[k], arrived))
        n_qu[h] = n_qu[h - 1] if h > 0 else 0.0
        return n_in, n_qu, n_out


def oracle_single_link(entries, params: LinkParams, discharge_budgets, dt: float):
    """Cumulative ``(N_in, N_qu, N_out)`` for the given entries and per-step budgets."""
    return PointQueueOracle(params, list(entries), list(discharge_budgets), dt).run()


def oracle_node(supplies, demands, rates, order) -> dict[str, float]:
    """Greedy allocation: feeders in ``order`` take what their receivers still hold."""
    residual = dict(supplies)
    out = {}
    for j in order:
        cap = math.inf
        for (jj, i), e in rates.items():
            if jj == j and e > 0:
                cap = min(cap, residual[i] / e)
        out[j] = min(demands[j], cap)
        for (jj, i), e in rates.items():
            if jj == j and e > 0:
                residual[i] = max(0.0, residual[i] - e * out[j])
    return out


def holding_free(problem, outflow, tol: float = 1e-9) -> bool:
    """Every feeder is either fully served or blocked by an exhausted receiver."""
    used = {i: 0.0 for i in problem.supplies}
    for (j, i), e in problem.rates.items():
        used[i] += e * outflow[j]
    for j, d in problem.demands.items():
        if outflow[j] >= d - tol:
            continue
        blocked = any(
            e > 0 and problem.supplies[i] - used[i] <= tol
            for (jj, i), e in problem.rates.items()
            if jj == j
        )
        if not blocked:
            return False
    return True


def property_invariance(problem, solve, tol: float = 1e-9) -> list[str]:
    """Failures of the invariance principle for ``solve`` on ``problem``.

    Raising supplies when every feeder is demand-constrained must leave the
    solution unchanged; raising the demand of a supply-constrained feeder
    must leave that feeder's outflow unchanged.
    """
    base = solve(problem)
    failures = []
    # classify with half the tolerance so a shortfall at the margin cannot
    # count as both "demand-constrained" and "changed by more than tol"
    constrained = [j for j, d in problem.demands.items() if base[j] < d - tol / 2]
    if not constrained:
        for i in problem.supplies:
            bigger = type(problem)(
                {**problem.supplies, i: problem.supplies[i] * 2 + 1}, dict(problem.demands), dict(problem.rates)
            )
            after = solve(bigger)
            if any(abs(after[j] - base[j]) > tol for j in base):
                failures.append(f"raising supply of {i} changed a demand-constrained solution")
    for j in constrained:
        bigger = type(problem)(
            dict(problem.supplies), {**problem.demands, j: problem.demands[j] * 2 + 1}, dict(problem.rates)
        )
        after = solve(bigger)
        if abs(after[j] - base[j]) > tol:
            failures.append(f"raising demand of supply-constrained {j} changed its outflow")
    return failures


@dataclass
class CflReport:
    """(link, step, n_f) triples where the fixed-speed update would need n_f < 2."""

    entries: list[tuple[str, int, int]]
    branch: str = "time-varying"

    @property
    def links(self) -> list[str]:
        return sorted({e[0] for e in self.entries}, key=natural_key)


def property_cfl(scenario: Scenario, queue_lengths: dict[str, Sequence[float]] | None = None) -> CflReport:
    """Scan every physical link and step for fixed-speed CFL violations.

    ``queue_lengths`` (per link, per step) shortens the free-flow part;
    without it the whole link is assumed free. The engine always uses the
    time-varying-speed queue update, so the report records that branch.
    """
    entries = []
    for link in scenario.physical_links:
        lq = (queue_lengths or {}).get(link.link_id)
        for k in range(scenario.horizon_steps):
            free = link.length - (lq[k] if lq is not None else 0.0)
            n_f = math.ceil(free / at(link.speed_profile, k) / scenario.dt - 1e-9)
            if n_f < 2:
                entries.append((link.link_id, k, n_f))
    return CflReport(entries)
