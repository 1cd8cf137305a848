"""Classical synchronous-machine model and numerical ODE integration.

The machine keeps a constant internal EMF ``e_q0`` behind the transient
reactance ``x'_d``.  States are the rotor angle ``delta`` (rad, machine
reference) and the per-unit frequency ``omega``; the synchronous frequency
is 1.0 pu and the angle equation carries the ``omega_base`` rad/s scale:

    d(delta)/dt = omega_base * (omega - 1)
    d(omega)/dt = (p_m - d*(omega - 1) - (e_q0*|V|/x'_d) * sin(delta - theta)) / m

Integrators: fixed-step ``euler``/``rk4`` and adaptive ``bosh3``/``dopri5``
with embedded error control.  Adaptive output is resampled onto uniform
grids through cubic Hermite interpolation over the accepted steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Generator

__all__ = [
    "OMEGA_SYNC",
    "DEFAULT_OMEGA_BASE",
    "MachineParams",
    "MachineState",
    "Trajectory",
    "IntegratorConfig",
    "StepLimitError",
    "NonFiniteError",
    "DegenerateVoltageError",
    "stator_currents",
    "swing_rhs",
    "swing_field",
    "initial_conditions",
    "machine_params_from_dispatch",
    "integrate",
    "simulate_machine",
    "sample_on_grid",
    "canonical_grid",
    "stability_check",
]

OMEGA_SYNC = 1.0
DEFAULT_OMEGA_BASE = 2.0 * math.pi * 60.0

#: canonical comparison grid for losses and metrics: 31 points over [0, 3] s
CANONICAL_HORIZON = 3.0
CANONICAL_POINTS = 31


class StepLimitError(RuntimeError):
    """Integration exceeded the configured step budget."""


class NonFiniteError(ArithmeticError):
    """A state component became NaN or infinite during integration."""


class DegenerateVoltageError(ValueError):
    """Terminal voltage magnitude must be positive."""


@dataclass(frozen=True)
class MachineParams:
    x_d_prime: float
    inertia: float
    damping: float
    p_m: float
    e_q0: float
    v_mag: float
    v_ang: float
    omega_s: float = OMEGA_SYNC
    omega_base: float = DEFAULT_OMEGA_BASE


@dataclass(frozen=True)
class MachineState:
    delta: float
    omega: float


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped states; ``states[k]`` belongs to ``times[k]``.

    ``states`` has shape ``(T, ...)`` with the state layout of the integrated
    system (machine trajectories use ``(T, 2)`` = delta, omega).  ``derivs``
    holds the vector field at each emitted point and feeds the cubic Hermite
    resampler.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        x = np.asarray(self.states, dtype=np.float64)
        if t.ndim != 1 or len(t) != len(x):
            raise ValueError("times and states must align")
        if len(t) == 0 or t[0] != 0.0:
            raise ValueError("trajectories start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @property
    def delta(self) -> np.ndarray:
        return self.states[..., 0]

    @property
    def omega(self) -> np.ndarray:
        return self.states[..., 1]

    def machine_states(self) -> list[MachineState]:
        return [MachineState(float(s[0]), float(s[1])) for s in self.states]


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "dopri5"
    dt: float = 0.001
    horizon: float = CANONICAL_HORIZON
    rtol: float = 1e-9
    atol: float = 1e-12
    max_steps: int = 200_000

    def __post_init__(self):
        if self.method not in ("euler", "rk4", "bosh3", "dopri5"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt <= 0 or self.horizon <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("dt, horizon, rtol, atol must be positive")


def canonical_grid(horizon: float = CANONICAL_HORIZON,
                   points: int = CANONICAL_POINTS) -> np.ndarray:
    return np.linspace(0.0, horizon, points)


def stator_currents(params: MachineParams, e_d: float, e_q: float,
                    delta: float):
    """d/q-axis stator currents for given EMF components and rotor angle."""
    rel = delta - params.v_ang
    i_d = (e_q - params.v_mag * np.cos(rel)) / params.x_d_prime
    i_q = (params.v_mag * np.sin(rel) - e_d) / params.x_d_prime
    return i_d, i_q


def swing_rhs(params: MachineParams, s: MachineState) -> MachineState:
    """Time derivative of the machine state, packaged in the state layout."""
    d_delta = params.omega_base * (s.omega - params.omega_s)
    p_e = (params.e_q0 * params.v_mag / params.x_d_prime) * math.sin(s.delta - params.v_ang)
    d_omega = (params.p_m - params.damping * (s.omega - params.omega_s) - p_e) / params.inertia
    return MachineState(d_delta, d_omega)


def swing_field(params: MachineParams):
    """Vectorized vector field over states shaped ``(..., 2)``."""
    k = params.e_q0 * params.v_mag / params.x_d_prime
    inv_m = 1.0 / params.inertia

    def field(t, x):
        dw = x[..., 1] - params.omega_s
        out = np.empty_like(x)
        out[..., 0] = params.omega_base * dw
        out[..., 1] = (params.p_m - params.damping * dw
                       - k * np.sin(x[..., 0] - params.v_ang)) * inv_m
        return out

    return field


def initial_conditions(gen: Generator, p_r: float, q_r: float,
                       v_mag: float, v_ang: float):
    """Steady-state rotor angle, EMF magnitude, and frequency for a dispatch.

    Closed form of the active/reactive power balance at the machine
    terminals: with ``x = x'_d``,

        delta0 = v_ang + atan2(p_r * x, q_r * x + v_mag^2)
        e_q0   = sqrt((p_r * x)^2 + (q_r * x + v_mag^2)^2) / v_mag

    and omega0 is the synchronous frequency.
    """
    return _initial_conditions_xd(gen.x_d_prime, p_r, q_r, v_mag, v_ang)


def _initial_conditions_xd(x_d_prime: float, p_r: float, q_r: float,
                           v_mag: float, v_ang: float):
    if v_mag <= 0:
        raise DegenerateVoltageError(f"v_mag must be positive, got {v_mag}")
    a = p_r * x_d_prime
    c = q_r * x_d_prime + v_mag * v_mag
    delta0 = v_ang + math.atan2(a, c)
    e_q0 = math.sqrt(a * a + c * c) / v_mag
    return delta0, e_q0, OMEGA_SYNC


def machine_params_from_dispatch(gen: Generator, p_r: float, q_r: float,
                                 v_mag: float, v_ang: float,
                                 omega_base: float = DEFAULT_OMEGA_BASE) -> MachineParams:
    """Machine parameters implied by a dispatch point, with ``p_m = p_r``.

    The mechanical input matches the dispatched electrical power, so the
    returned parameters place the computed initial state at an equilibrium.
    """
    _, e_q0, _ = _initial_conditions_xd(gen.x_d_prime, p_r, q_r, v_mag, v_ang)
    return MachineParams(
        x_d_prime=gen.x_d_prime, inertia=gen.inertia, damping=gen.damping,
        p_m=p_r, e_q0=e_q0, v_mag=v_mag, v_ang=v_ang, omega_base=omega_base)


# Bogacki-Shampine 3(2): 4 stages, FSAL
_BOSH3_C = (0.0, 0.5, 0.75, 1.0)
_BOSH3_A = ((), (0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9))
_BOSH3_B = (2 / 9, 1 / 3, 4 / 9, 0.0)
_BOSH3_E = (2 / 9 - 7 / 24, 1 / 3 - 1 / 4, 4 / 9 - 1 / 3, -1 / 8)
_BOSH3_ORDER = 3

# Dormand-Prince 5(4): 7 stages, FSAL
_DOPRI5_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DOPRI5_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DOPRI5_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DOPRI5_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
_DOPRI5_ORDER = 5

_MAX_GROWTH = 10.0
_MIN_SHRINK = 0.2
_SAFETY = 0.9


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite state at t = {t:.6g}")


def integrate(rhs, x0, cfg: IntegratorConfig) -> Trajectory:
    """Integrate ``dx/dt = rhs(t, x)`` from 0 to ``cfg.horizon``.

    Fixed-step methods emit a state every ``cfg.dt``; adaptive methods emit
    every accepted step.  The field value at each emitted point is stored on
    the trajectory for dense interpolation.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _check_finite(x0, 0.0)
    if cfg.method in ("euler", "rk4"):
        return _integrate_fixed(rhs, x0, cfg)
    return _integrate_adaptive(rhs, x0, cfg)


def _integrate_fixed(rhs, x0, cfg: IntegratorConfig) -> Trajectory:
    n = int(math.ceil(cfg.horizon / cfg.dt - 1e-9))
    if n > cfg.max_steps:
        raise StepLimitError(f"{n} steps exceed max_steps={cfg.max_steps}")
    times = np.empty(n + 1)
    states = np.empty((n + 1,) + x0.shape)
    derivs = np.empty_like(states)
    t, x = 0.0, x0
    f = np.asarray(rhs(t, x), dtype=np.float64)
    times[0], states[0], derivs[0] = t, x, f
    for i in range(n):
        h = min(cfg.dt, cfg.horizon - t)
        if cfg.method == "euler":
            x = x + h * f
        else:  # rk4
            k1 = f
            k2 = np.asarray(rhs(t + h / 2, x + (h / 2) * k1), dtype=np.float64)
            k3 = np.asarray(rhs(t + h / 2, x + (h / 2) * k2), dtype=np.float64)
            k4 = np.asarray(rhs(t + h, x + h * k3), dtype=np.float64)
            x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = cfg.horizon if i == n - 1 else t + h
        _check_finite(x, t)
        f = np.asarray(rhs(t, x), dtype=np.float64)
        times[i + 1], states[i + 1], derivs[i + 1] = t, x, f
    return Trajectory(times, states, derivs)


def _integrate_adaptive(rhs, x0, cfg: IntegratorConfig) -> Trajectory:
    if cfg.method == "bosh3":
        c, a, b, e, order = _BOSH3_C, _BOSH3_A, _BOSH3_B, _BOSH3_E, _BOSH3_ORDER
    else:
        c, a, b, e, order = _DOPRI5_C, _DOPRI5_A, _DOPRI5_B, _DOPRI5_E, _DOPRI5_ORDER
    n_stage = len(c)
    exponent = -1.0 / order

    t, x = 0.0, x0
    f0 = np.asarray(rhs(t, x), dtype=np.float64)
    times, states, derivs = [0.0], [x0], [f0]
    h = min(cfg.dt, cfg.horizon)
    k = [None] * n_stage
    k[0] = f0
    steps = 0
    while t < cfg.horizon:
        if steps >= cfg.max_steps:
            raise StepLimitError(f"max_steps={cfg.max_steps} exhausted at t={t:.6g}")
        steps += 1
        h = min(h, cfg.horizon - t)
        for s in range(1, n_stage):
            xs = x
            for j, aij in enumerate(a[s]):
                if aij != 0.0:
                    xs = xs + (h * aij) * k[j]
            k[s] = np.asarray(rhs(t + c[s] * h, xs), dtype=np.float64)
        x_new = x
        for j, bj in enumerate(b):
            if bj != 0.0:
                x_new = x_new + (h * bj) * k[j]
        err_vec = np.zeros_like(x)
        for j, ej in enumerate(e):
            if ej != 0.0:
                err_vec = err_vec + (h * ej) * k[j]
        _check_finite(x_new, t + h)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            t = t + h
            x = x_new
            k[0] = k[n_stage - 1]  # FSAL
            times.append(t)
            states.append(x)
            derivs.append(k[0])
            factor = _MAX_GROWTH if err == 0.0 else min(_MAX_GROWTH, _SAFETY * err ** exponent)
            h = h * factor
        else:
            h = h * max(_MIN_SHRINK, _SAFETY * err ** exponent)
            # k[0] still holds f(t, x); FSAL slot is only rotated on acceptance
    return Trajectory(np.array(times), np.array(states), np.array(derivs))


def simulate_machine(params: MachineParams, state0: MachineState,
                     cfg: IntegratorConfig) -> Trajectory:
    x0 = np.array([state0.delta, state0.omega])
    return integrate(swing_field(params), x0, cfg)


def sample_on_grid(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    """Resample a trajectory onto ``grid`` by cubic Hermite interpolation.

    Requires the stored derivative values; grid points must lie inside
    [0, times[-1]].
    """
    if traj.derivs is None:
        raise ValueError("trajectory has no stored derivatives")
    grid = np.asarray(grid, dtype=np.float64)
    t = traj.times
    if grid[0] < 0 or grid[-1] > t[-1] + 1e-12:
        raise ValueError("grid extends beyond the trajectory")
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 2)
    t0, t1 = t[idx], t[idx + 1]
    h = t1 - t0
    s = np.clip((grid - t0) / h, 0.0, 1.0)
    extra = traj.states.ndim - 1
    s = s.reshape(s.shape + (1,) * extra)
    h = h.reshape(h.shape + (1,) * extra)
    x0, x1 = traj.states[idx], traj.states[idx + 1]
    f0, f1 = traj.derivs[idx], traj.derivs[idx + 1]
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def stability_check(traj: Trajectory, delta_max: float):
    """Worst threshold exceedance of the rotor angle along a trajectory.

    Returns ``(stable, margin, worst_violation)`` where ``margin`` is
    ``delta_max - max(delta)`` and ``worst_violation = max(0, -margin)``.
    """
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    peak = float(np.max(traj.delta))
    margin = delta_max - peak
    worst = max(0.0, -margin)
    return worst == 0.0, margin, worst
