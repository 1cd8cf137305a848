"""Steady-state AC optimal power flow in polar per-unit form.

Evaluation operations (cost, directed line flows, nodal balance residuals,
violation reports) are pure functions of a :class:`DispatchPoint`.  The
reference solver runs an augmented-Lagrangian outer loop around a
quasi-Newton inner minimizer with multistart, reusing the module's analytic
Jacobians.  A bus-type Newton-Raphson power flow is included as an
independent balance oracle.

Conventions: voltages polar, reference angle exactly 0, line flow limits
apply to both directions, angle differences use the principal value without
wrapping.
"""

from __future__ import annotations

import csv
import functools
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from .grid import LoadProfile, Network, network_hash, perturb_loads

__all__ = [
    "DispatchPoint",
    "ViolationReport",
    "OpfSample",
    "SolverConfig",
    "InfeasibleError",
    "NoConvergenceError",
    "dispatch_cost",
    "dispatch_cost_gradient",
    "line_flows",
    "balance_residuals",
    "balance_jacobians",
    "static_violations",
    "solve_reference",
    "newton_power_flow",
    "build_dataset",
    "split_indices",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class DispatchPoint:
    """Decision vector: generator injections plus bus voltage phasors."""

    p_r: np.ndarray
    q_r: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray

    def __post_init__(self):
        for name in ("p_r", "q_r", "v_mag", "v_ang"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.p_r.shape != self.q_r.shape or self.v_mag.shape != self.v_ang.shape:
            raise ValueError("mismatched dispatch vector lengths")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_r, self.q_r, self.v_mag, self.v_ang])


def _check_dims(net: Network, d: DispatchPoint):
    if len(d.p_r) != net.n_gen or len(d.v_mag) != net.n_bus:
        raise ValueError(
            f"dispatch sized for {len(d.p_r)} generators / {len(d.v_mag)} buses, "
            f"network has {net.n_gen} / {net.n_bus}")


@dataclass(frozen=True)
class ViolationReport:
    """Nonnegative violation amounts per constraint family.

    Equality families report magnitudes of residuals; inequality families
    report distances past their bounds.  ``totals`` sums each family.
    """

    flow_eq: np.ndarray
    v_bounds: np.ndarray
    angle_bounds: np.ndarray
    gen_bounds: np.ndarray
    line_flow: np.ndarray
    ref_angle: float
    totals: dict

    def max_violation(self) -> float:
        parts = [self.flow_eq, self.v_bounds, self.angle_bounds,
                 self.gen_bounds, self.line_flow]
        return max(max((float(a.max()) if a.size else 0.0) for a in parts),
                   self.ref_angle)


@dataclass(frozen=True)
class OpfSample:
    load: LoadProfile
    optimum: DispatchPoint
    objective_value: float
    achieved_eq_tol: float
    achieved_ineq_tol: float


@dataclass(frozen=True)
class SolverConfig:
    eq_tol: float = 1e-6
    ineq_tol: float = 1e-8
    n_starts: int = 5
    seed: int = 0
    mu0: float = 100.0
    mu_growth: float = 10.0
    mu_max: float = 1e9
    max_outer: int = 25
    inner_maxiter: int = 500

    def to_dict(self) -> dict:
        return asdict(self)


class InfeasibleError(RuntimeError):
    """No start produced a point satisfying the balance equations."""

    def __init__(self, msg, worst_residual):
        super().__init__(msg)
        self.worst_residual = worst_residual


class NoConvergenceError(RuntimeError):
    """Solver stalled; carries the best iterate found."""

    def __init__(self, msg, best: DispatchPoint, residual: float):
        super().__init__(msg)
        self.best = best
        self.residual = residual


@functools.lru_cache(maxsize=None)
def _incidence(net: Network):
    """0/1 scatter matrices: generator->bus, line-from->bus, line-to->bus."""
    cg = np.zeros((net.n_bus, net.n_gen))
    cg[net.gen_bus, np.arange(net.n_gen)] = 1.0
    cf = np.zeros((net.n_bus, net.n_line))
    cf[net.line_from, np.arange(net.n_line)] = 1.0
    ct = np.zeros((net.n_bus, net.n_line))
    ct[net.line_to, np.arange(net.n_line)] = 1.0
    return cg, cf, ct


def dispatch_cost(net: Network, d: DispatchPoint) -> float:
    """Total generation cost sum(c2*p^2 + c1*p + c0) in $."""
    _check_dims(net, d)
    p = d.p_r
    return float(np.sum(net.c2 * p * p + net.c1 * p + net.c0))


def dispatch_cost_gradient(net: Network, d: DispatchPoint) -> np.ndarray:
    """d(cost)/d(p_r)."""
    _check_dims(net, d)
    return 2.0 * net.c2 * d.p_r + net.c1


def _flow_terms(net: Network, v_mag: np.ndarray, v_ang: np.ndarray):
    vf = v_mag[net.line_from]
    vt = v_mag[net.line_to]
    delta = v_ang[net.line_from] - v_ang[net.line_to]
    cd = np.cos(delta)
    sd = np.sin(delta)
    vv = vf * vt
    g, b = net.line_g, net.line_b
    p_f = g * (vf * vf - vv * cd) - b * (vv * sd)
    q_f = -b * (vf * vf - vv * cd) - g * (vv * sd)
    p_t = g * (vt * vt - vv * cd) + b * (vv * sd)
    q_t = -b * (vt * vt - vv * cd) + g * (vv * sd)
    return vf, vt, delta, cd, sd, p_f, q_f, p_t, q_t


def line_flows(net: Network, d: DispatchPoint):
    """Directed complex flows (S_from_to, S_to_from) per line."""
    _check_dims(net, d)
    _, _, _, _, _, p_f, q_f, p_t, q_t = _flow_terms(net, d.v_mag, d.v_ang)
    return p_f + 1j * q_f, p_t + 1j * q_t


def balance_residuals(net: Network, d: DispatchPoint, load: LoadProfile) -> np.ndarray:
    """Per-bus complex mismatch: generation - demand - outgoing flows."""
    _check_dims(net, d)
    if load.n_bus != net.n_bus:
        raise ValueError("load profile sized for a different network")
    s_f, s_t = line_flows(net, d)
    cg, cf, ct = _incidence(net)
    inj = cg @ (d.p_r + 1j * d.q_r) - (load.p_d + 1j * load.q_d)
    return inj - cf @ s_f - ct @ s_t


def static_violations(net: Network, d: DispatchPoint, load: LoadProfile) -> ViolationReport:
    """Violation amounts for every steady-state constraint family."""
    _check_dims(net, d)
    res = balance_residuals(net, d, load)
    flow_eq = np.abs(res)
    v_bounds = np.maximum(0.0, d.v_mag - net.v_max) + np.maximum(0.0, net.v_min - d.v_mag)
    delta = d.v_ang[net.line_from] - d.v_ang[net.line_to]
    angle_bounds = np.maximum(0.0, np.abs(delta) - net.angle_limit)
    gen_bounds = (np.maximum(0.0, d.p_r - net.p_max) + np.maximum(0.0, net.p_min - d.p_r)
                  + np.maximum(0.0, d.q_r - net.q_max) + np.maximum(0.0, net.q_min - d.q_r))
    s_f, s_t = line_flows(net, d)
    line_flow = (np.maximum(0.0, np.abs(s_f) - net.flow_limit)
                 + np.maximum(0.0, np.abs(s_t) - net.flow_limit))
    ref_angle = abs(float(d.v_ang[net.reference_bus]))
    totals = {
        "flow_eq": float(flow_eq.sum()),
        "v_bounds": float(v_bounds.sum()),
        "angle_bounds": float(angle_bounds.sum()),
        "gen_bounds": float(gen_bounds.sum()),
        "line_flow": float(line_flow.sum()),
        "ref_angle": ref_angle,
    }
    return ViolationReport(flow_eq, v_bounds, angle_bounds, gen_bounds,
                           line_flow, ref_angle, totals)


def balance_jacobians(net: Network, d: DispatchPoint):
    """Dense partials of the real/reactive balance residuals.

    Returns ``(drp, drq)`` where each maps variable blocks to (n_bus x dim)
    arrays for keys ``p_r``, ``q_r``, ``v_mag``, ``v_ang``.
    """
    _check_dims(net, d)
    nb, nl = net.n_bus, net.n_line
    F, T = net.line_from, net.line_to
    g, b = net.line_g, net.line_b
    vf, vt, _, cd, sd, _, _, _, _ = _flow_terms(net, d.v_mag, d.v_ang)
    vv = vf * vt

    dpf_dvf = g * (2 * vf - vt * cd) - b * (vt * sd)
    dpf_dvt = -g * vf * cd - b * vf * sd
    dpf_dd = g * vv * sd - b * vv * cd
    dqf_dvf = -b * (2 * vf - vt * cd) - g * (vt * sd)
    dqf_dvt = b * vf * cd - g * vf * sd
    dqf_dd = -b * vv * sd - g * vv * cd
    dpt_dvf = -g * vt * cd + b * vt * sd
    dpt_dvt = g * (2 * vt - vf * cd) + b * (vf * sd)
    dpt_dd = g * vv * sd + b * vv * cd
    dqt_dvf = b * vt * cd + g * vt * sd
    dqt_dvt = -b * (2 * vt - vf * cd) + g * (vf * sd)
    dqt_dd = -b * vv * sd + g * vv * cd

    cg, _, _ = _incidence(net)
    lines = np.arange(nl)

    def assemble(df_dvf, df_dvt, df_dd, dt_dvf, dt_dvt, dt_dd):
        # residual contribution is -(from-flow scattered at F) - (to-flow at T)
        dvm = np.zeros((nb, nb))
        np.add.at(dvm, (F, F), -df_dvf)
        np.add.at(dvm, (F, T), -df_dvt)
        np.add.at(dvm, (T, F), -dt_dvf)
        np.add.at(dvm, (T, T), -dt_dvt)
        dva = np.zeros((nb, nb))
        np.add.at(dva, (F, F), -df_dd)
        np.add.at(dva, (F, T), df_dd)
        np.add.at(dva, (T, F), -dt_dd)
        np.add.at(dva, (T, T), dt_dd)
        return dvm, dva

    drp_dvm, drp_dva = assemble(dpf_dvf, dpf_dvt, dpf_dd, dpt_dvf, dpt_dvt, dpt_dd)
    drq_dvm, drq_dva = assemble(dqf_dvf, dqf_dvt, dqf_dd, dqt_dvf, dqt_dvt, dqt_dd)
    zeros = np.zeros((nb, net.n_gen))
    drp = {"p_r": cg, "q_r": zeros, "v_mag": drp_dvm, "v_ang": drp_dva}
    drq = {"p_r": zeros, "q_r": cg, "v_mag": drq_dvm, "v_ang": drq_dva}
    return drp, drq


# --------------------------------------------------------------------------
# Newton-Raphson power flow (independent balance oracle and re-dispatch tool)
# --------------------------------------------------------------------------

def newton_power_flow(net: Network, load: LoadProfile, p_gen: np.ndarray,
                      v_gen: np.ndarray, tol: float = 1e-10,
                      max_iter: int = 50) -> DispatchPoint:
    """Solve the balance equations with classic PV/PQ/slack bus typing.

    ``p_gen`` fixes active injections of every generator except the one at
    the reference bus (slack); ``v_gen`` fixes voltage magnitudes at all
    generator buses.  Returns the full dispatch with slack power and
    generator reactive outputs recovered from the converged state.
    """
    if load.n_bus != net.n_bus:
        raise ValueError("load profile sized for a different network")
    nb = net.n_bus
    gen_bus = net.gen_bus
    ref = net.reference_bus
    if ref not in gen_bus:
        raise ValueError("reference bus must host a generator for slack typing")
    is_gen_bus = np.zeros(nb, dtype=bool)
    is_gen_bus[gen_bus] = True
    pv = np.array([i for i in range(nb) if is_gen_bus[i] and i != ref], dtype=np.intp)
    pq = np.array([i for i in range(nb) if not is_gen_bus[i]], dtype=np.intp)
    ang_idx = np.array([i for i in range(nb) if i != ref], dtype=np.intp)

    v_mag = np.ones(nb)
    for k, bus in enumerate(gen_bus):
        v_mag[bus] = v_gen[k]
    v_ang = np.zeros(nb)

    p_sched = -load.p_d.copy()
    for k, bus in enumerate(gen_bus):
        if bus != ref:
            p_sched[bus] += p_gen[k]
    q_sched = -load.q_d.copy()

    cg, cf, ct = _incidence(net)
    for _ in range(max_iter):
        _, _, _, _, _, p_f, q_f, p_t, q_t = _flow_terms(net, v_mag, v_ang)
        p_inj = cf @ p_f + ct @ p_t
        q_inj = cf @ q_f + ct @ q_t
        mis_p = p_sched[ang_idx] - p_inj[ang_idx]
        mis_q = q_sched[pq] - q_inj[pq]
        mism = np.concatenate([mis_p, mis_q])
        if np.max(np.abs(mism)) < tol:
            break
        probe = DispatchPoint(np.zeros(net.n_gen), np.zeros(net.n_gen), v_mag, v_ang)
        drp, drq = balance_jacobians(net, probe)
        # residual = sched - flows, so d(mismatch)/dx = d(residual)/dx here
        j11 = drp["v_ang"][np.ix_(ang_idx, ang_idx)]
        j12 = drp["v_mag"][np.ix_(ang_idx, pq)]
        j21 = drq["v_ang"][np.ix_(pq, ang_idx)]
        j22 = drq["v_mag"][np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -mism)
        except np.linalg.LinAlgError:
            raise NoConvergenceError(
                "power flow Jacobian is singular",
                DispatchPoint(np.zeros(net.n_gen), np.zeros(net.n_gen), v_mag, v_ang),
                float(np.max(np.abs(mism)))) from None
        v_ang[ang_idx] += dx[:len(ang_idx)]
        v_mag[pq] += dx[len(ang_idx):]
    else:
        raise NoConvergenceError(
            f"power flow did not reach {tol} in {max_iter} iterations",
            DispatchPoint(np.zeros(net.n_gen), np.zeros(net.n_gen), v_mag, v_ang),
            float(np.max(np.abs(mism))))

    _, _, _, _, _, p_f, q_f, p_t, q_t = _flow_terms(net, v_mag, v_ang)
    p_inj = cf @ p_f + ct @ p_t
    q_inj = cf @ q_f + ct @ q_t
    p_out = np.array(p_gen, dtype=np.float64)
    q_out = np.empty(net.n_gen)
    for k, bus in enumerate(gen_bus):
        if bus == ref:
            p_out[k] = p_inj[bus] + load.p_d[bus]
        q_out[k] = q_inj[bus] + load.q_d[bus]
    return DispatchPoint(p_out, q_out, v_mag, v_ang)


# --------------------------------------------------------------------------
# Reference solver: augmented Lagrangian + L-BFGS-B inner + multistart
# --------------------------------------------------------------------------

def _pack_bounds(net: Network):
    lo = np.concatenate([net.p_min, net.q_min, net.v_min,
                         np.full(net.n_bus - 1, -np.pi)])
    hi = np.concatenate([net.p_max, net.q_max, net.v_max,
                         np.full(net.n_bus - 1, np.pi)])
    return lo, hi


def _split_x(net: Network, x: np.ndarray):
    ng, nb = net.n_gen, net.n_bus
    p = x[:ng]
    q = x[ng:2 * ng]
    vm = x[2 * ng:2 * ng + nb]
    va = np.zeros(nb)
    free = [i for i in range(nb) if i != net.reference_bus]
    va[free] = x[2 * ng + nb:]
    return p, q, vm, va, free


def _dispatch_from_x(net: Network, x: np.ndarray) -> DispatchPoint:
    p, q, vm, va, _ = _split_x(net, x)
    return DispatchPoint(p, q, vm, va)


class _Aug:
    """Augmented-Lagrangian value/gradient for one (network, load) pair."""

    def __init__(self, net: Network, load: LoadProfile, cost_scale: float):
        self.net = net
        self.load = load
        self.scale = cost_scale
        nb, nl = net.n_bus, net.n_line
        self.lam_p = np.zeros(nb)
        self.lam_q = np.zeros(nb)
        self.lam_sf = np.zeros(nl)
        self.lam_st = np.zeros(nl)
        self.lam_a1 = np.zeros(nl)
        self.lam_a2 = np.zeros(nl)
        self.mu = 0.0
        self.free = [i for i in range(nb) if i != net.reference_bus]

    def residuals(self, x):
        net = self.net
        p, q, vm, va, _ = _split_x(net, x)
        vf, vt, delta, cd, sd, p_f, q_f, p_t, q_t = _flow_terms(net, vm, va)
        cg, cf, ct = _incidence(net)
        rp = cg @ p - self.load.p_d - cf @ p_f - ct @ p_t
        rq = cg @ q - self.load.q_d - cf @ q_f - ct @ q_t
        s2 = net.flow_limit * net.flow_limit
        c_sf = p_f * p_f + q_f * q_f - s2
        c_st = p_t * p_t + q_t * q_t - s2
        c_a1 = delta - net.angle_limit
        c_a2 = -delta - net.angle_limit
        return (p, q, vm, va, vf, vt, delta, cd, sd,
                p_f, q_f, p_t, q_t, rp, rq, c_sf, c_st, c_a1, c_a2)

    def value_and_grad(self, x):
        net = self.net
        (p, q, vm, va, vf, vt, delta, cd, sd,
         p_f, q_f, p_t, q_t, rp, rq, c_sf, c_st, c_a1, c_a2) = self.residuals(x)
        mu = self.mu
        cost = np.sum(net.c2 * p * p + net.c1 * p + net.c0) / self.scale
        val = cost
        val += self.lam_p @ rp + self.lam_q @ rq
        val += 0.5 * mu * (rp @ rp + rq @ rq)
        t_sf = np.maximum(0.0, self.lam_sf + mu * c_sf)
        t_st = np.maximum(0.0, self.lam_st + mu * c_st)
        t_a1 = np.maximum(0.0, self.lam_a1 + mu * c_a1)
        t_a2 = np.maximum(0.0, self.lam_a2 + mu * c_a2)
        for t, lam in ((t_sf, self.lam_sf), (t_st, self.lam_st),
                       (t_a1, self.lam_a1), (t_a2, self.lam_a2)):
            val += np.sum(t * t - lam * lam) / (2.0 * mu)

        # gradient: equality weights w = lam + mu*r, inequality weights t
        wp = self.lam_p + mu * rp
        wq = self.lam_q + mu * rq
        g, b = net.line_g, net.line_b
        F, T = net.line_from, net.line_to
        vv = vf * vt

        dpf_dvf = g * (2 * vf - vt * cd) - b * (vt * sd)
        dpf_dvt = -g * vf * cd - b * vf * sd
        dpf_dd = g * vv * sd - b * vv * cd
        dqf_dvf = -b * (2 * vf - vt * cd) - g * (vt * sd)
        dqf_dvt = b * vf * cd - g * vf * sd
        dqf_dd = -b * vv * sd - g * vv * cd
        dpt_dvf = -g * vt * cd + b * vt * sd
        dpt_dvt = g * (2 * vt - vf * cd) + b * (vf * sd)
        dpt_dd = g * vv * sd + b * vv * cd
        dqt_dvf = b * vt * cd + g * vt * sd
        dqt_dvt = -b * (2 * vt - vf * cd) + g * (vf * sd)
        dqt_dd = -b * vv * sd + g * vv * cd

        # flow-level weights: -(scattered equality weights) + flow-limit terms
        w_pf = -wp[F] + t_sf * 2.0 * p_f
        w_qf = -wq[F] + t_sf * 2.0 * q_f
        w_pt = -wp[T] + t_st * 2.0 * p_t
        w_qt = -wq[T] + t_st * 2.0 * q_t

        cg = _incidence(net)[0]
        grad_p = (2.0 * net.c2 * p + net.c1) / self.scale + cg.T @ wp
        grad_q = cg.T @ wq

        g_vm = np.zeros(net.n_bus)
        np.add.at(g_vm, F, w_pf * dpf_dvf + w_qf * dqf_dvf + w_pt * dpt_dvf + w_qt * dqt_dvf)
        np.add.at(g_vm, T, w_pf * dpf_dvt + w_qf * dqf_dvt + w_pt * dpt_dvt + w_qt * dqt_dvt)

        g_delta = (w_pf * dpf_dd + w_qf * dqf_dd + w_pt * dpt_dd + w_qt * dqt_dd
                   + t_a1 - t_a2)
        g_va = np.zeros(net.n_bus)
        np.add.at(g_va, F, g_delta)
        np.add.at(g_va, T, -g_delta)

        grad = np.concatenate([grad_p, grad_q, g_vm, g_va[self.free]])
        return val, grad

    def update_multipliers(self, x):
        (_, _, _, _, _, _, _, _, _, _, _, _, _,
         rp, rq, c_sf, c_st, c_a1, c_a2) = self.residuals(x)
        mu = self.mu
        self.lam_p = self.lam_p + mu * rp
        self.lam_q = self.lam_q + mu * rq
        self.lam_sf = np.maximum(0.0, self.lam_sf + mu * c_sf)
        self.lam_st = np.maximum(0.0, self.lam_st + mu * c_st)
        self.lam_a1 = np.maximum(0.0, self.lam_a1 + mu * c_a1)
        self.lam_a2 = np.maximum(0.0, self.lam_a2 + mu * c_a2)

    def infeasibility(self, x):
        (_, _, _, _, _, _, _, _, _, p_f, q_f, p_t, q_t,
         rp, rq, _, _, c_a1, c_a2) = self.residuals(x)
        eq = float(np.max(np.hypot(rp, rq)))  # complex-magnitude convention
        s_f = np.hypot(p_f, q_f)
        s_t = np.hypot(p_t, q_t)
        ineq = max(
            float(np.max(np.maximum(0.0, s_f - self.net.flow_limit), initial=0.0)),
            float(np.max(np.maximum(0.0, s_t - self.net.flow_limit), initial=0.0)),
            float(np.max(np.maximum(0.0, c_a1), initial=0.0)),
            float(np.max(np.maximum(0.0, c_a2), initial=0.0)),
        )
        return eq, ineq


def _flat_start(net: Network, load: LoadProfile) -> np.ndarray:
    share = net.p_max / max(net.p_max.sum(), 1e-9)
    p0 = np.clip(load.p_d.sum() * share, net.p_min, net.p_max)
    q0 = np.clip(load.q_d.sum() * share, net.q_min, net.q_max)
    vm0 = np.clip(np.ones(net.n_bus), net.v_min, net.v_max)
    return np.concatenate([p0, q0, vm0, np.zeros(net.n_bus - 1)])


def _random_start(net: Network, load: LoadProfile, rng) -> np.ndarray:
    p0 = rng.uniform(net.p_min, net.p_max)
    q0 = rng.uniform(net.q_min, net.q_max)
    vm0 = rng.uniform(net.v_min, net.v_max)
    va0 = rng.uniform(-0.1, 0.1, net.n_bus - 1)
    return np.concatenate([p0, q0, vm0, va0])


def _solve_single(net: Network, load: LoadProfile, cfg: SolverConfig,
                  x0: np.ndarray):
    scale = float(np.mean(net.c2 * net.p_max ** 2 + net.c1 * net.p_max + net.c0))
    scale = max(scale, 1.0)
    aug = _Aug(net, load, scale)
    lo, hi = _pack_bounds(net)
    bounds = list(zip(lo, hi))
    x = np.clip(x0, lo, hi)
    aug.mu = cfg.mu0
    prev_eq = np.inf
    for _ in range(cfg.max_outer):
        res = minimize(aug.value_and_grad, x, jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options={"maxiter": cfg.inner_maxiter, "ftol": 1e-14,
                                "gtol": 1e-8, "maxcor": 30})
        x = res.x
        eq, ineq = aug.infeasibility(x)
        if eq <= cfg.eq_tol and ineq <= cfg.ineq_tol:
            return x, eq, ineq, True
        aug.update_multipliers(x)
        if eq > 0.25 * prev_eq:
            aug.mu = min(aug.mu * cfg.mu_growth, cfg.mu_max)
        prev_eq = eq
    eq, ineq = aug.infeasibility(x)
    return x, eq, ineq, False


def solve_reference(net: Network, load: LoadProfile,
                    cfg: SolverConfig = SolverConfig(),
                    warm_start: DispatchPoint | None = None) -> OpfSample:
    """Locally optimal dispatch for one load profile.

    Runs the augmented-Lagrangian solve from a flat start (or the supplied
    warm start) plus seeded random in-box starts, and returns the cheapest
    converged point.  Raises :class:`InfeasibleError` when every start ends
    far from balance, :class:`NoConvergenceError` (best iterate attached)
    when stalls dominate.
    """
    if load.n_bus != net.n_bus:
        raise ValueError("load profile sized for a different network")
    rng = np.random.default_rng(cfg.seed)
    starts = []
    if warm_start is not None:
        free = [i for i in range(net.n_bus) if i != net.reference_bus]
        starts.append(np.concatenate([warm_start.p_r, warm_start.q_r,
                                      warm_start.v_mag, warm_start.v_ang[free]]))
    starts.append(_flat_start(net, load))
    while len(starts) < max(cfg.n_starts, 1):
        starts.append(_random_start(net, load, rng))
    starts = starts[:max(cfg.n_starts, 1)]

    converged = []
    best_fail = None
    for x0 in starts:
        x, eq, ineq, ok = _solve_single(net, load, cfg, x0)
        if ok:
            d = _dispatch_from_x(net, x)
            converged.append((dispatch_cost(net, d), d, eq, ineq))
        elif best_fail is None or eq < best_fail[1]:
            best_fail = (x, eq, ineq)
    if converged:
        cost, d, eq, ineq = min(converged, key=lambda c: c[0])
        return OpfSample(load=load, optimum=d, objective_value=cost,
                         achieved_eq_tol=eq, achieved_ineq_tol=ineq)
    x, eq, ineq = best_fail
    if eq > max(1e3 * cfg.eq_tol, 1e-3):
        raise InfeasibleError(
            f"all {len(starts)} starts ended with balance residual {eq:.3e}", eq)
    raise NoConvergenceError(
        f"stalled at residual {eq:.3e} after {len(starts)} starts",
        _dispatch_from_x(net, x), eq)


# --------------------------------------------------------------------------
# Supervised dataset construction
# --------------------------------------------------------------------------

def split_indices(n: int, seed: int) -> dict:
    """Deterministic 80/10/10 shuffle split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def _slot_seed(master: int, slot: int, attempt: int) -> int:
    return int(np.random.SeedSequence([master, slot, attempt]).generate_state(1)[0])


def build_dataset(net: Network, n: int, fraction: float, seed: int,
                  cfg: SolverConfig = SolverConfig(n_starts=2),
                  redraw_budget: int = 5, threads: int = 1):
    """Sample ``n`` feasible perturbed-load problems and their optima.

    Infeasible draws are discarded and redrawn (up to ``redraw_budget``
    attempts per slot, so at most ``redraw_budget * n`` solves).  Each slot's
    redraw chain is independent and seeded, so results do not depend on
    thread scheduling.  Returns ``(samples, splits)``.
    """
    if n < 10:
        raise ValueError("need at least 10 samples for an 80/10/10 split")
    nominal = solve_reference(net, perturb_loads(net, 0.0, 0), cfg)

    def solve_slot(slot: int) -> OpfSample:
        last_exc = None
        for attempt in range(redraw_budget):
            load = perturb_loads(net, fraction, _slot_seed(seed, slot, attempt))
            try:
                return solve_reference(net, load, cfg, warm_start=nominal.optimum)
            except (InfeasibleError, NoConvergenceError) as exc:
                last_exc = exc
        raise RuntimeError(
            f"slot {slot}: no feasible sample in {redraw_budget} draws") from last_exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(solve_slot, range(n)))
    else:
        samples = [solve_slot(i) for i in range(n)]
    return samples, split_indices(n, seed)


_SPLIT_ORDER = ("train", "val", "test")


def dataset_manifest(net: Network, n: int, fraction: float, seed: int,
                     cfg: SolverConfig) -> dict:
    return {
        "format_version": 1,
        "net_hash": network_hash(net),
        "n": n,
        "fraction": fraction,
        "seed": seed,
        "solver": cfg.to_dict(),
    }


def save_dataset(path_csv, samples, splits, manifest: dict, path_manifest=None):
    """Write samples to columnar CSV plus a JSON manifest."""
    tags = {}
    for name in _SPLIT_ORDER:
        for i in splits[name]:
            tags[int(i)] = name
    first = samples[0]
    nb = first.load.n_bus
    ng = len(first.optimum.p_r)
    header = (["id", "split"]
              + [f"pd_{i}" for i in range(nb)] + [f"qd_{i}" for i in range(nb)]
              + [f"pr_{i}" for i in range(ng)] + [f"qr_{i}" for i in range(ng)]
              + [f"vm_{i}" for i in range(nb)] + [f"va_{i}" for i in range(nb)]
              + ["objective", "eq_tol_achieved", "ineq_tol_achieved"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, s in enumerate(samples):
        row = [str(i), tags[i]]
        for vec in (s.load.p_d, s.load.q_d, s.optimum.p_r, s.optimum.q_r,
                    s.optimum.v_mag, s.optimum.v_ang):
            row.extend(repr(float(v)) for v in vec)
        row.extend([repr(float(s.objective_value)), repr(float(s.achieved_eq_tol)),
                    repr(float(s.achieved_ineq_tol))])
        w.writerow(row)
    with open(path_csv, "w") as f:
        f.write(buf.getvalue())
    if path_manifest is None:
        path_manifest = str(path_csv) + ".manifest.json"
    with open(path_manifest, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_dataset(path_csv):
    """Read a dataset CSV back into ``(samples, splits)``."""
    with open(path_csv) as f:
        rows = list(csv.reader(f))
    header = rows[0]
    nb = sum(1 for h in header if h.startswith("pd_"))
    ng = sum(1 for h in header if h.startswith("pr_"))
    samples = []
    split_lists = {name: [] for name in _SPLIT_ORDER}
    for row in rows[1:]:
        idx = int(row[0])
        split_lists[row[1]].append(idx)
        vals = [float(v) for v in row[2:]]
        o = 0
        pd_ = np.array(vals[o:o + nb]); o += nb
        qd_ = np.array(vals[o:o + nb]); o += nb
        pr = np.array(vals[o:o + ng]); o += ng
        qr = np.array(vals[o:o + ng]); o += ng
        vm = np.array(vals[o:o + nb]); o += nb
        va = np.array(vals[o:o + nb]); o += nb
        obj, eq_t, ineq_t = vals[o:o + 3]
        samples.append(OpfSample(
            load=LoadProfile(pd_, qd_),
            optimum=DispatchPoint(pr, qr, vm, va),
            objective_value=obj, achieved_eq_tol=eq_t, achieved_ineq_tol=ineq_t))
    splits = {name: np.array(sorted(split_lists[name]), dtype=np.intp)
              for name in _SPLIT_ORDER}
    return samples, splits
