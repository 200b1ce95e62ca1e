"""Node model: distributing downstream supply over feeding links.

Everything is expressed in per-step vehicle increments. For an outgoing
link ``i`` the residual supply is ``S_i = N_in_max(k+1) - N_in(k)``; for an
incoming link ``j`` the desired increment is ``D_j = N_out_max(k+1) - N_out(k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .network import NodeSpec, natural_key

STRATEGIES = ("priority", "most-constrained")


@dataclass
class NodeStepProblem:
    supplies: dict[str, float]
    demands: dict[str, float]
    rates: dict[tuple[str, str], float]
    node_id: str = ""

    def __post_init__(self):
        for kind, values in (("supply", self.supplies), ("demand", self.demands)):
            for lid, v in values.items():
                if math.isnan(v) or v < 0 or (kind == "demand" and math.isinf(v)):
                    raise ValueError(f"node {self.node_id}: {kind} of {lid} is {v}")
        for key, e in self.rates.items():
            if not (math.isfinite(e) and 0.0 <= e <= 1.0):
                raise ValueError(f"node {self.node_id}: turning rate {key} is {e}")

    @property
    def feeders(self) -> list[str]:
        return sorted(self.demands, key=natural_key)

    @property
    def receivers(self) -> list[str]:
        return sorted(self.supplies, key=natural_key)

    def inflow_from(self, outflow: Mapping[str, float]) -> dict[str, float]:
        return {
            i: sum(self.rates.get((j, i), 0.0) * outflow[j] for j in self.feeders)
            for i in self.receivers
        }


@dataclass
class NodeStepSolution:
    outflow: dict[str, float]
    inflow: dict[str, float]
    residual: dict[str, float] = field(default_factory=dict)


def beta(q_bar_in: float, q_in_des: float) -> float:
    """Share of the desired inflow that the receiving link can take."""
    if q_bar_in >= q_in_des:
        return 1.0
    return q_bar_in / q_in_des


def desired_inflow(
    node: NodeSpec,
    feeder_increments: Mapping[str, float],
    n_in_now: Mapping[str, float],
    dt: float,
) -> dict[str, tuple[float, float]]:
    """Desired inflow of every outgoing link as ``(rate, cumulative count)``."""
    out = {}
    for i in node.outgoing:
        inc = sum(node.rate(j, i) * feeder_increments[j] for j in node.incoming)
        out[i] = (inc / dt, n_in_now[i] + inc)
    return out


def allocate(problem: NodeStepProblem, strategy: str = "priority") -> NodeStepSolution:
    """Holding-free allocation of residual supply to feeders.

    Each round compares every receiver's residual supply with the demand
    still routed to it. When nothing is short the remaining feeders are
    released in full. Otherwise one or more feeders are settled: a settled
    feeder releases as much as its most restrictive receiver allows, the
    receivers' residuals drop by its routed share, and its turning rates
    leave the problem.

    ``strategy="priority"`` settles the lowest-id unsettled feeder each
    round, which keeps the invariance principle. ``"most-constrained"``
    settles every feeder of the receiver with the smallest supply ratio
    first; it can give more to a feeder after raising another's demand.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown allocation strategy {strategy!r}")
    residual = dict(problem.supplies)
    rates = dict(problem.rates)
    feeders = problem.feeders
    receivers = problem.receivers
    unsettled = list(feeders)
    outflow: dict[str, float] = {}

    def settle(j):
        served = [i for i in receivers if rates.get((j, i), 0.0) > 0.0]
        d = problem.demands[j]
        binding = None
        cap = math.inf
        for i in served:
            c = residual[i] / rates[(j, i)]
            if c < cap:
                cap, binding = c, i
        released = min(d, cap)
        for i in served:
            residual[i] -= rates[(j, i)] * released
            rates[(j, i)] = 0.0
        if binding is not None and cap <= d:
            residual[binding] = 0.0
        for i in served:
            residual[i] = max(residual[i], 0.0)
        outflow[j] = released
        unsettled.remove(j)

    while unsettled:
        betas = {}
        for i in receivers:
            want = sum(rates.get((j, i), 0.0) * problem.demands[j] for j in unsettled)
            betas[i] = beta(residual[i], want)
        if all(b >= 1.0 for b in betas.values()):
            for j in list(unsettled):
                outflow[j] = problem.demands[j]
                for i in receivers:
                    residual[i] -= rates.get((j, i), 0.0) * problem.demands[j]
                unsettled.remove(j)
            break
        if strategy == "priority":
            settle(unsettled[0])
        else:
            xi = min(receivers, key=lambda i: (betas[i], natural_key(i)))
            for j in [j for j in unsettled if rates.get((j, xi), 0.0) > 0.0]:
                settle(j)

    return NodeStepSolution(outflow, problem.inflow_from(outflow), residual)
