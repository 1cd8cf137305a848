"""Test-set metrics and timing benchmarks.

Stability statistics reported here always come from integrating the true
machine field at the predicted dispatch (the surrogate is part of the model
under test, so it never grades itself).  Any surrogate-derived stability
number is suffixed ``_surrogate``.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, asdict

import numpy as np

from .acopf import DispatchPoint, dispatch_cost, static_violations
from .dynamics import (
    IntegratorConfig,
    canonical_grid,
    initial_conditions,
    integrate,
    machine_params_from_dispatch,
    sample_on_grid,
    stability_check,
    swing_field,
)
from .grid import Network
from .node import rollout
from .training import LtoProxy, predict_batch, predict_dispatch

__all__ = [
    "EvalReport",
    "ZeroReferenceObjective",
    "steady_state_gap",
    "true_field_stability",
    "evaluate_model",
    "bench_inference",
    "export_trajectories",
]


class ZeroReferenceObjective(ValueError):
    """The reference objective is zero; a percentage gap is undefined."""


def steady_state_gap(net: Network, y_hat: DispatchPoint, y_star: DispatchPoint) -> float:
    """Percentage objective-value distance |f(y*) - f(yhat)| / |f(y*)| * 100."""
    f_star = dispatch_cost(net, y_star)
    if f_star == 0.0:
        raise ZeroReferenceObjective("reference dispatch has zero objective")
    return abs(f_star - dispatch_cost(net, y_hat)) / abs(f_star) * 100.0


@dataclass(frozen=True)
class EvalReport:
    """Paper-style metric summary over one test split."""

    n_samples: int
    mse_p: float
    mse_q: float
    mse_vm: float
    mse_va: float
    gap_mean: float
    gap_std: float
    flow_violation_mean: float
    boundary_violation_mean: float
    stability_violation_mean: float
    pct_unstable: float
    stability_violation_mean_surrogate: float | None
    pct_unstable_surrogate: float | None
    inference_mean: float
    inference_std: float
    delta_max: float
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def csv_row(self):
        d = self.to_dict()
        keys = sorted(d)
        return keys, [d[k] for k in keys]


def _predicted_initial_state(gen, p, q, vm, va):
    delta0, _, omega0 = initial_conditions(gen, p, q, vm, va)
    return np.array([delta0, omega0, vm, va])


def true_field_stability(network: Network, p, q, vm, va, delta_max: float,
                         integrator: IntegratorConfig | None = None):
    """Worst rotor-angle threshold violation per sample, by true-field
    integration of every generator at the given dispatch arrays."""
    cfg = integrator or IntegratorConfig(method="dopri5")
    n = len(p)
    worst = np.zeros(n)
    for i in range(n):
        for gi, gen in enumerate(network.generators):
            bus = gen.bus
            x0 = _predicted_initial_state(gen, p[i, gi], q[i, gi], vm[i, bus], va[i, bus])
            params = machine_params_from_dispatch(gen, p[i, gi], q[i, gi],
                                                  vm[i, bus], va[i, bus])
            traj = integrate(swing_field(params), x0[:2], cfg)
            _, _, viol = stability_check(traj, delta_max)
            worst[i] = max(worst[i], viol)
    return worst


def _surrogate_stability(network: Network, surrogates, p, q, vm, va,
                         delta_max: float):
    n = len(p)
    worst = np.zeros(n)
    for gi, s in enumerate(surrogates):
        gen = network.generators[gi]
        bus = gen.bus
        a = p[:, gi] * gen.x_d_prime
        c = q[:, gi] * gen.x_d_prime + vm[:, bus] ** 2
        delta0 = va[:, bus] + np.arctan2(a, c)
        x0 = np.stack([delta0, np.ones(n), vm[:, bus], va[:, bus]], axis=1)
        peaks = rollout(s, x0)[:, :, 0].max(axis=1)
        worst = np.maximum(worst, np.maximum(0.0, peaks - delta_max))
    return worst


def evaluate_model(proxy: LtoProxy, surrogates, samples, splits,
                   network: Network, delta_max: float,
                   split: str = "test",
                   integrator: IntegratorConfig | None = None,
                   timing_repeats: int = 20,
                   include_surrogate_stability: bool = True,
                   config_hash: str = "") -> EvalReport:
    """Full metric sweep over one split.

    MSEs are per-component means against the solver labels; constraint
    violations follow the equality-magnitude / inequality-hinge measures
    averaged over samples and constraints; the stability column integrates
    the true field.
    """
    idx = splits[split]
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    subset = [samples[i] for i in idx]
    loads = np.array([np.concatenate([s.load.p_d, s.load.q_d]) for s in subset])
    p, q, vm, va = predict_batch(proxy, loads)

    lp = np.array([s.optimum.p_r for s in subset])
    lq = np.array([s.optimum.q_r for s in subset])
    lvm = np.array([s.optimum.v_mag for s in subset])
    lva = np.array([s.optimum.v_ang for s in subset])

    gaps = np.empty(len(subset))
    flow_means = np.empty(len(subset))
    boundary_means = np.empty(len(subset))
    for i, s in enumerate(subset):
        d = DispatchPoint(p[i], q[i], vm[i], va[i])
        gaps[i] = steady_state_gap(network, d, s.optimum)
        rep = static_violations(network, d, s.load)
        flow_means[i] = rep.flow_eq.mean()
        pooled = np.concatenate([rep.v_bounds, rep.angle_bounds,
                                 rep.gen_bounds, rep.line_flow])
        boundary_means[i] = pooled.mean()

    worst_true = true_field_stability(network, p, q, vm, va, delta_max, integrator)

    worst_sur = None
    if include_surrogate_stability and surrogates:
        worst_sur = _surrogate_stability(network, surrogates, p, q, vm, va, delta_max)

    times = []
    reps = min(timing_repeats, len(subset))
    for i in range(reps):
        t0 = time.perf_counter()
        d = predict_dispatch(proxy, subset[i].load)
        if surrogates:
            for gi, s in enumerate(surrogates):
                gen = network.generators[gi]
                bus = gen.bus
                x0 = _predicted_initial_state(gen, d.p_r[gi], d.q_r[gi],
                                              d.v_mag[bus], d.v_ang[bus])
                rollout(s, x0[None, :])
        times.append(time.perf_counter() - t0)

    return EvalReport(
        n_samples=len(subset),
        mse_p=float(np.mean((p - lp) ** 2)),
        mse_q=float(np.mean((q - lq) ** 2)),
        mse_vm=float(np.mean((vm - lvm) ** 2)),
        mse_va=float(np.mean((va - lva) ** 2)),
        gap_mean=float(gaps.mean()),
        gap_std=float(gaps.std()),
        flow_violation_mean=float(flow_means.mean()),
        boundary_violation_mean=float(boundary_means.mean()),
        stability_violation_mean=float(worst_true.mean()),
        pct_unstable=float(100.0 * (worst_true > 0).mean()),
        stability_violation_mean_surrogate=(
            None if worst_sur is None else float(worst_sur.mean())),
        pct_unstable_surrogate=(
            None if worst_sur is None else float(100.0 * (worst_sur > 0).mean())),
        inference_mean=float(np.mean(times)),
        inference_std=float(np.std(times)),
        delta_max=delta_max,
        config_hash=config_hash,
    )


def bench_inference(models: dict, network: Network, samples,
                    repeats: int = 50) -> dict:
    """Single-sample inference wall time per named model.

    ``models`` maps a label to ``(proxy, surrogates)``; an empty surrogate
    list times the dispatch prediction alone.  Returns per-model mean/std
    seconds over ``repeats`` samples (cycled if the list is shorter).
    """
    out = {}
    idx = [i % len(samples) for i in range(repeats)]
    for name, (proxy, surrogates) in models.items():
        predict_dispatch(proxy, samples[0].load)  # warm-up excluded
        times = []
        for i in idx:
            s = samples[i]
            t0 = time.perf_counter()
            d = predict_dispatch(proxy, s.load)
            for gi, sur in enumerate(surrogates):
                gen = network.generators[gi]
                bus = gen.bus
                x0 = _predicted_initial_state(gen, d.p_r[gi], d.q_r[gi],
                                              d.v_mag[bus], d.v_ang[bus])
                rollout(sur, x0[None, :])
            times.append(time.perf_counter() - t0)
        out[name] = {"mean": float(np.mean(times)), "std": float(np.std(times)),
                     "n": repeats}
    return out


def export_trajectories(path, network: Network, proxy: LtoProxy, surrogates,
                        samples, indices, delta_max: float,
                        integrator: IntegratorConfig | None = None):
    """Per-generator true vs surrogate trajectories for a few samples."""
    cfg = integrator or IntegratorConfig(method="dopri5")
    grid_t = canonical_grid(cfg.horizon)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "gen", "t", "delta_true", "omega_true",
                "delta_surrogate", "omega_surrogate", "delta_max"])
    for i in indices:
        s = samples[i]
        d = predict_dispatch(proxy, s.load)
        for gi, gen in enumerate(network.generators):
            bus = gen.bus
            x0 = _predicted_initial_state(gen, d.p_r[gi], d.q_r[gi],
                                          d.v_mag[bus], d.v_ang[bus])
            params = machine_params_from_dispatch(gen, d.p_r[gi], d.q_r[gi],
                                                  d.v_mag[bus], d.v_ang[bus])
            traj = integrate(swing_field(params), x0[:2], cfg)
            true_grid = sample_on_grid(traj, grid_t)
            sur = rollout(surrogates[gi], x0[None, :])[0] if surrogates else None
            for k, t in enumerate(grid_t):
                row = [i, gi, repr(float(t)),
                       repr(float(true_grid[k, 0])), repr(float(true_grid[k, 1]))]
                if sur is not None:
                    row += [repr(float(sur[k, 0])), repr(float(sur[k, 1]))]
                else:
                    row += ["", ""]
                row.append(repr(float(delta_max)))
                w.writerow(row)
    with open(path, "w") as f:
        f.write(buf.getvalue())
