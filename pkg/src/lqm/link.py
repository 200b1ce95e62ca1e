"""Per-link dynamics on cumulative curves.

A link's state at step ``k`` is the triple of cumulative counts
``N_in(k)`` (entered), ``N_qu(k)`` (reached the queue tail) and
``N_out(k)`` (left). States are 0-based: state 0 is the empty network and
every series reads 0 before it. Step ``k`` advances state ``k`` to state
``k + 1`` using the free-flow speed ``v_f(k)``.

The functions here are pure: they read a :class:`LinkRecord` and return
numbers. Writing results back is the engine's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import LinkParams, at

class CflError(ValueError):
    """The fixed-speed queue update would look back fewer than two steps."""


def _ceil(x: float) -> int:
    # ceil that ignores round-off just above an integer (220/11/10 -> 2, not 3)
    return math.ceil(x - 1e-9)


def free_flow_lag(L_f: float, v_f: float, dt: float) -> tuple[int, float]:
    """``(n_f, gamma_f)``: whole steps needed to cross ``L_f`` and the interpolation weight."""
    t_f = L_f / v_f
    n_f = _ceil(t_f / dt)
    return n_f, n_f - t_f / dt


def shockwave_lag(L_q: float, w: float, dt: float) -> tuple[int, float]:
    """``(n_sh, gamma_sh)`` for a backward wave crossing a queue of ``L_q``; ``n_sh >= 1``."""
    t_sh = L_q / w
    n_sh = max(1, _ceil(t_sh / dt))
    return n_sh, n_sh - t_sh / dt


@dataclass(frozen=True)
class FdPoint:
    critical_flow: float
    critical_density: float


def fd_point(params: LinkParams, k: int) -> FdPoint:
    """Apex of the triangular fundamental diagram at step ``k``."""
    v = params.free_flow_speed(k)
    w = params.backward_wave_speed
    rho_cr = params.jam_density * w / (v + w)
    return FdPoint(rho_cr * v, rho_cr)


def queue_density(fd: FdPoint, jam: float, q_out: float) -> float:
    """Density of the queue discharging at ``q_out``, kept on the congested branch."""
    rho = fd.critical_density + (jam - fd.critical_density) * (fd.critical_flow - q_out) / fd.critical_flow
    return min(max(rho, fd.critical_density), jam)


@dataclass
class LinkRecord:
    """Static parameters plus the full state history of one link.

    Arrays hold ``horizon + 1`` states. ``queue_length`` and
    ``queue_density`` at index ``k`` are the values used during step ``k``.
    """

    params: LinkParams
    cum_in: np.ndarray
    cum_queue: np.ndarray
    cum_out: np.ndarray
    queue_length: np.ndarray
    queue_density: np.ndarray

    @classmethod
    def empty(cls, params: LinkParams, horizon: int) -> "LinkRecord":
        z = lambda: np.zeros(horizon + 1)  # noqa: E731
        return cls(params, z(), z(), z(), z(), z())

    def n_in(self, k: int) -> float:
        return float(self.cum_in[k]) if k >= 0 else 0.0

    def n_qu(self, k: int) -> float:
        return float(self.cum_queue[k]) if k >= 0 else 0.0

    def n_out(self, k: int) -> float:
        return float(self.cum_out[k]) if k >= 0 else 0.0

    def q_out_last(self, k: int, dt: float) -> float:
        """Realised outflow rate over the step that ended at state ``k``."""
        return (self.n_out(k) - self.n_out(k - 1)) / dt


def queue_lengths(rec: LinkRecord, k: int) -> tuple[float, float]:
    length = rec.params.length
    lq = (rec.n_qu(k) - rec.n_out(k)) / rec.queue_density[k]
    lq = min(max(lq, 0.0), length)
    return lq, length - lq


def queue_inflow_fixed(rec: LinkRecord, L_f: float, v_f: float, dt: float, k: int) -> float:
    """Queue inflow for a constant free-flow speed by interpolating ``N_in``.

    Raises :class:`CflError` when the free-flow part is crossed in under two
    steps, because the interpolation would then need ``N_in(k + 1)``.
    """
    n_f, gamma = free_flow_lag(L_f, v_f, dt)
    if n_f < 2:
        raise CflError(
            f"link {rec.params.link_id}: n_f = {n_f} < 2 at step {k} (L_f = {L_f:g} m, v_f = {v_f:g} m/s)"
        )
    n_qu = gamma * rec.n_in(k + 1 - n_f) + (1.0 - gamma) * rec.n_in(k - n_f)
    return min(max(n_qu, rec.n_out(k)), rec.n_in(k))


@dataclass(frozen=True)
class TravelDistanceTable:
    """Distance each recent parcel of entrants could have covered by the end of step ``k``.

    Row ``j`` belongs to the vehicles counted in ``N_in`` at state
    ``window_start + j``. ``n_bar`` is the lookback after which every
    vehicle has certainly crossed the link even at minimum speed.
    """

    distances: np.ndarray
    window_start: int
    step: int
    n_bar: int

    @property
    def entry_states(self) -> np.ndarray:
        return np.arange(self.window_start, self.step + 1)


def travel_distance_table(speed_profile, v_min: float, L_i: float, dt: float, k: int) -> TravelDistanceTable:
    n_bar = _ceil(L_i / v_min / dt)
    start = max(0, k - n_bar)
    if isinstance(speed_profile, np.ndarray) and len(speed_profile) > k:
        speeds = speed_profile[start : k + 1]
    else:
        speeds = np.array([at(speed_profile, t) for t in range(start, k + 1)], dtype=float)
    # reverse cumulative sum: row j sums v(start+j) .. v(k)
    distances = dt * np.cumsum(speeds[::-1])[::-1]
    return TravelDistanceTable(distances, start, k, n_bar)


def _window(rec: LinkRecord, table: TravelDistanceTable) -> tuple[float, np.ndarray]:
    n = rec.cum_in[table.window_start : table.step + 1]
    inc = n[1:] - n[:-1]
    return float(n[0]), inc


def queue_inflow_tvfs(rec: LinkRecord, table: TravelDistanceTable, L_f: float, k: int) -> float:
    """Queue inflow under a time-varying speed for a given free-flow length ``L_f``."""
    base, inc = _window(rec, table)
    selected = table.distances[1:] > L_f
    n_qu = base + float(inc @ selected)
    return min(max(n_qu, rec.n_out(k)), rec.n_in(k))


def queue_inflow(rec: LinkRecord, table: TravelDistanceTable, rho_q: float, k: int) -> float:
    """Queue inflow with the tail position updated parcel by parcel.

    The free-flow length a parcel must cover depends on the queue it joins,
    which itself grows as earlier parcels arrive. Parcels are scanned in
    entry order: each one joins if its travel distance reaches the tail
    formed by everything queued ahead of it, and the scan stops at the
    first parcel that falls short (FIFO). The queue never shrinks below its
    previous inflow.
    """
    length = rec.params.length
    n_out = rec.n_out(k)
    n_win = rec.cum_in[table.window_start : k + 1]
    cur = max(rec.n_qu(k - 1), n_out, float(n_win[0]))
    for j in range(1, len(n_win)):
        target = float(n_win[j])
        if target <= cur:
            continue
        lq = min(max((cur - n_out) / rho_q, 0.0), length)
        if table.distances[j] > length - lq:
            cur = target
        else:
            break
    return min(max(cur, n_out), rec.n_in(k))


def inflow_limit(
    rec: LinkRecord, L_q: float, L_f: float, rho_q: float, w: float, dt: float, k: int
) -> tuple[float, float]:
    """Largest cumulative inflow the link can accept by state ``k + 1``.

    Space freed at the queue head reaches the tail after ``L_q / w``
    seconds, so the storage released is read off ``N_out`` that long ago
    (history indices are clamped to ``k``).
    """
    n_sh, gamma = shockwave_lag(L_q, w, dt)
    n_sh_out = gamma * rec.n_out(min(k, k + 2 - n_sh)) + (1.0 - gamma) * rec.n_out(min(k, k + 1 - n_sh))
    limit = n_sh_out + rho_q * L_q + rec.params.jam_density * L_f
    rate = max(0.0, (limit - rec.n_in(k)) / dt)
    return limit, rate


def actual_inflow(q_bar_in: float, q_des: float, rec: LinkRecord, dt: float, k: int) -> float:
    """``N_in(k + 1)`` after admitting ``min(q_bar_in, q_des)`` for one step."""
    return rec.n_in(k) + min(q_bar_in, q_des) * dt


def outflow_bounds(
    rec: LinkRecord, table: TravelDistanceTable, q_sat: float, b: float, dt: float, k: int
) -> tuple[float, float, float]:
    """Desired and maximum cumulative outflow at state ``k + 1``.

    Returns ``(N_out_des, N_out_max, q_out_max)``. The desired outflow
    counts the parcels whose travel distance exceeds the link length; the
    maximum additionally respects the green-weighted saturation budget
    ``q_sat * b * dt``.
    """
    base, inc = _window(rec, table)
    desired = base + float(inc @ (table.distances[1:] > rec.params.length))
    desired = min(desired, rec.n_in(k))
    n_out = rec.n_out(k)
    n_max = max(n_out, min(n_out + q_sat * b * dt, desired))
    return desired, n_max, (n_max - n_out) / dt
