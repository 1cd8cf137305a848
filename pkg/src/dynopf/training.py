"""Dispatch proxy and the joint constrained training loop.

The proxy maps a load vector to the full dispatch: active/reactive
generation and voltage magnitudes are squashed onto their operational boxes
with sigmoid-affine output maps, free angles are emitted for every bus
except the reference (pinned to exactly zero), so bound constraints and the
reference-angle equality hold by construction for any parameters.

Three training modes share one loop:

* ``baseline_mse``     - prediction error only.
* ``baseline_ld``      - prediction error plus multiplier-weighted static
                         constraint violations, multipliers rising with the
                         observed violations after every epoch.
* ``dynopf``           - additionally runs each generator's neural-ODE
                         surrogate from initial conditions implied by the
                         prediction and penalizes rotor-angle threshold
                         violations along the rollout (plus the
                         initial-condition consistency residuals).

Equality violations are smoothed, ``sqrt(r^2 + eps^2) - eps``, to stay
differentiable at zero; inequality violations are plain hinges.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import neural as nn
from .acopf import _incidence
from .dynamics import OMEGA_SYNC
from .grid import LoadProfile, Network
from .node import rollout, rollout_tape

__all__ = [
    "LtoProxy",
    "Multipliers",
    "LossBreakdown",
    "TrainerConfig",
    "TrainResult",
    "TrainingAborted",
    "new_proxy",
    "predict_dispatch",
    "predict_batch",
    "violation_value",
    "update_multipliers",
    "dynopf_loss",
    "train",
    "save_proxy",
    "load_proxy",
    "STATIC_FAMILIES",
    "DYNAMIC_FAMILIES",
]

SMOOTH_EPS = 1e-8
_FLOW_EPS2 = 1e-24  # keeps |S| differentiable when a line carries nothing

STATIC_FAMILIES = ("balance", "line_flow", "angle", "v_bounds", "gen_bounds")
DYNAMIC_FAMILIES = ("stability", "init_cond")
ALL_FAMILIES = STATIC_FAMILIES + DYNAMIC_FAMILIES


class TrainingAborted(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class LtoProxy:
    """Load-to-dispatch network with box-feasible output construction."""

    net: nn.DenseNet
    n_bus: int
    n_gen: int
    ref_bus: int
    box_lo: np.ndarray   # (2*n_gen + n_bus,): p, q, |V| lower bounds
    box_hi: np.ndarray
    in_mean: np.ndarray  # (2*n_bus,) load standardization
    in_scale: np.ndarray

    @property
    def out_width(self) -> int:
        return 2 * self.n_gen + self.n_bus + (self.n_bus - 1)


def new_proxy(network: Network, seed: int, hidden=(128, 128)) -> LtoProxy:
    nb, ng = network.n_bus, network.n_gen
    widths = (2 * nb, *hidden, 2 * ng + nb + nb - 1)
    acts = tuple(["tanh"] * len(hidden)) + ("identity",)
    box_lo = np.concatenate([network.p_min, network.q_min, network.v_min])
    box_hi = np.concatenate([network.p_max, network.q_max, network.v_max])
    return LtoProxy(net=nn.DenseNet.init(widths, acts, seed), n_bus=nb, n_gen=ng,
                    ref_bus=network.reference_bus, box_lo=box_lo, box_hi=box_hi,
                    in_mean=np.zeros(2 * nb), in_scale=np.ones(2 * nb))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def predict_batch(proxy: LtoProxy, loads: np.ndarray):
    """Numpy inference: loads (B, 2*n_bus) -> (p, q, vm, va) arrays."""
    loads = np.atleast_2d(np.asarray(loads, dtype=np.float64))
    if loads.shape[1] != 2 * proxy.n_bus:
        raise ValueError("load vector width mismatch")
    z = (loads - proxy.in_mean) / proxy.in_scale
    raw = nn.forward(proxy.net, z)
    ng, nb = proxy.n_gen, proxy.n_bus
    boxed = proxy.box_lo + (proxy.box_hi - proxy.box_lo) * _sigmoid(raw[:, :2 * ng + nb])
    p = boxed[:, :ng]
    q = boxed[:, ng:2 * ng]
    vm = boxed[:, 2 * ng:2 * ng + nb]
    th_free = raw[:, 2 * ng + nb:]
    va = np.concatenate([th_free[:, :proxy.ref_bus],
                         np.zeros((len(loads), 1)),
                         th_free[:, proxy.ref_bus:]], axis=1)
    return p, q, vm, va


def predict_dispatch(proxy: LtoProxy, load: LoadProfile):
    """Single-profile prediction as a DispatchPoint."""
    from .acopf import DispatchPoint

    x = np.concatenate([load.p_d, load.q_d])[None, :]
    p, q, vm, va = predict_batch(proxy, x)
    return DispatchPoint(p[0], q[0], vm[0], va[0])


def _predict_tape(proxy: LtoProxy, loads: np.ndarray, tape: nn.GradientTape):
    z = (loads - proxy.in_mean) / proxy.in_scale
    raw = nn.forward(proxy.net, tape.leaf(z), tape)
    ng, nb = proxy.n_gen, proxy.n_bus
    body = nn.take_cols(raw, 0, 2 * ng + nb)
    boxed = nn.add(proxy.box_lo,
                   nn.mul(proxy.box_hi - proxy.box_lo, nn.sigmoid(body)))
    p = nn.take_cols(boxed, 0, ng)
    q = nn.take_cols(boxed, ng, 2 * ng)
    vm = nn.take_cols(boxed, 2 * ng, 2 * ng + nb)
    th = nn.take_cols(raw, 2 * ng + nb, proxy.out_width)
    zero_col = np.zeros((loads.shape[0], 1))
    parts = []
    if proxy.ref_bus > 0:
        parts.append(nn.take_cols(th, 0, proxy.ref_bus))
    parts.append(zero_col)
    if proxy.ref_bus < nb - 1:
        parts.append(nn.take_cols(th, proxy.ref_bus, nb - 1))
    va = nn.concat(parts, axis=1)
    return p, q, vm, va


def violation_value(kind: str, residual: float) -> float:
    """Differentiable violation measure of one constraint residual.

    Equality residuals map to the smoothed absolute value
    ``sqrt(r^2 + eps^2) - eps``; inequality residuals to ``max(0, r)``.
    """
    if kind == "equality":
        return math.sqrt(residual * residual + SMOOTH_EPS ** 2) - SMOOTH_EPS
    if kind == "inequality":
        return max(0.0, residual)
    raise ValueError(f"kind must be 'equality' or 'inequality', got {kind!r}")


@dataclass(frozen=True)
class Multipliers:
    """Per-constraint nonnegative penalty weights and their ascent rate."""

    values: dict
    rho: float

    @classmethod
    def zeros(cls, network: Network, rho: float) -> "Multipliers":
        nb, nl, ng = network.n_bus, network.n_line, network.n_gen
        sizes = {"balance": nb, "line_flow": nl, "angle": nl,
                 "v_bounds": nb, "gen_bounds": ng,
                 "stability": ng, "init_cond": ng}
        return cls({k: np.zeros(n) for k, n in sizes.items()}, rho)

    def total(self) -> float:
        return float(sum(v.sum() for v in self.values.values()))


def update_multipliers(lam: Multipliers, mean_violations: dict) -> Multipliers:
    """Dual ascent: each multiplier grows by rho times its mean violation."""
    new = dict(lam.values)
    for k, v in mean_violations.items():
        v = np.asarray(v, dtype=np.float64)
        if np.any(v < 0):
            raise ValueError(f"negative violation for family {k!r}")
        new[k] = new[k] + lam.rho * v
    return Multipliers(new, lam.rho)


@dataclass(frozen=True)
class LossBreakdown:
    pred: float
    terms: dict
    total: float

    @staticmethod
    def assemble(pred: float, terms: dict) -> "LossBreakdown":
        total = pred
        for k in ALL_FAMILIES:
            if k in terms:
                total = total + terms[k]
        return LossBreakdown(pred, dict(terms), total)


@dataclass
class TrainerConfig:
    mode: str = "dynopf"
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    lr_min_factor: float = 0.05
    rho: float = 1.0
    delta_max: float = math.pi / 2
    seed: int = 0
    hidden: tuple = (128, 128)
    phi_lr_scale: float = 0.1
    freeze_node: bool = False
    include_static: bool = True
    run_dir: str | None = None
    node_checkpoints: list | None = None
    log_surrogate_stability: bool = True

    def __post_init__(self):
        if self.mode not in ("dynopf", "baseline_mse", "baseline_ld"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.lr <= 0 or self.rho < 0:
            raise ValueError("need lr > 0 and rho >= 0")

    def lr_at(self, update: int, total_updates: int) -> float:
        if self.lr_schedule == "constant" or total_updates <= 1:
            return self.lr
        lo = self.lr * self.lr_min_factor
        frac = update / max(total_updates - 1, 1)
        return lo + 0.5 * (self.lr - lo) * (1.0 + math.cos(math.pi * frac))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainResult:
    proxy: LtoProxy
    surrogates: list
    multipliers: Multipliers
    epoch_log: list
    config: TrainerConfig


# --------------------------------------------------------------------------
# Loss graph
# --------------------------------------------------------------------------

def _smooth_abs_pair(a, b):
    """Smoothed magnitude of a complex residual given as (real, imag) Vars."""
    mag2 = nn.add(nn.add(nn.square(a), nn.square(b)), SMOOTH_EPS ** 2)
    return nn.sub(nn.sqrt(mag2), SMOOTH_EPS)


def _static_graph(network: Network, p, q, vm, va, loads_pd, loads_qd):
    """Batched violation means for every static family; returns dict of Vars."""
    cg, cf, ct = _incidence(network)
    vf = nn.matmul(vm, cf)
    vt = nn.matmul(vm, ct)
    delta = nn.sub(nn.matmul(va, cf), nn.matmul(va, ct))
    cd = nn.cos(delta)
    sd = nn.sin(delta)
    vv = nn.mul(vf, vt)
    g, b = network.line_g, network.line_b
    a_f = nn.sub(nn.square(vf), nn.mul(vv, cd))
    b_f = nn.mul(vv, sd)
    p_f = nn.sub(nn.mul(a_f, g), nn.mul(b_f, b))
    q_f = nn.neg(nn.add(nn.mul(b_f, g), nn.mul(a_f, b)))
    a_t = nn.sub(nn.square(vt), nn.mul(vv, cd))
    p_t = nn.add(nn.mul(a_t, g), nn.mul(b_f, b))
    q_t = nn.add(nn.neg(nn.mul(a_t, b)), nn.mul(b_f, g))

    inj_p = nn.sub(nn.matmul(p, cg.T), loads_pd)
    inj_q = nn.sub(nn.matmul(q, cg.T), loads_qd)
    rp = nn.sub(inj_p, nn.add(nn.matmul(p_f, cf.T), nn.matmul(p_t, ct.T)))
    rq = nn.sub(inj_q, nn.add(nn.matmul(q_f, cf.T), nn.matmul(q_t, ct.T)))
    nu_balance = _smooth_abs_pair(rp, rq)

    s_f = nn.sqrt(nn.add(nn.add(nn.square(p_f), nn.square(q_f)), _FLOW_EPS2))
    s_t = nn.sqrt(nn.add(nn.add(nn.square(p_t), nn.square(q_t)), _FLOW_EPS2))
    lim = network.flow_limit
    nu_flow = nn.add(nn.hinge(nn.sub(s_f, lim)), nn.hinge(nn.sub(s_t, lim)))

    alim = network.angle_limit
    nu_angle = nn.add(nn.hinge(nn.sub(delta, alim)),
                      nn.hinge(nn.sub(nn.neg(delta), alim)))

    nu_v = nn.add(nn.hinge(nn.sub(vm, network.v_max)),
                  nn.hinge(nn.sub(nn.neg(vm), -network.v_min)))
    nu_gen = nn.add(
        nn.add(nn.hinge(nn.sub(p, network.p_max)),
               nn.hinge(nn.sub(nn.neg(p), -network.p_min))),
        nn.add(nn.hinge(nn.sub(q, network.q_max)),
               nn.hinge(nn.sub(nn.neg(q), -network.q_min))))

    return {
        "balance": nn.vmean(nu_balance, axis=0),
        "line_flow": nn.vmean(nu_flow, axis=0),
        "angle": nn.vmean(nu_angle, axis=0),
        "v_bounds": nn.vmean(nu_v, axis=0),
        "gen_bounds": nn.vmean(nu_gen, axis=0),
    }


def _initial_conditions_tape(network: Network, gi: int, p, q, vm, va):
    """Closed-form steady-state rotor angle / EMF for generator ``gi``,
    with the defining power-balance residuals for the consistency family."""
    gen = network.generators[gi]
    bus = gen.bus
    xd = gen.x_d_prime
    pg = nn.take_cols(p, gi, gi + 1)
    qg = nn.take_cols(q, gi, gi + 1)
    vg = nn.take_cols(vm, bus, bus + 1)
    tg = nn.take_cols(va, bus, bus + 1)
    a = nn.mul(pg, xd)
    c = nn.add(nn.mul(qg, xd), nn.square(vg))
    delta0 = nn.add(tg, nn.atan2(a, c))
    e_q0 = nn.div(nn.sqrt(nn.add(nn.add(nn.square(a), nn.square(c)), _FLOW_EPS2)), vg)
    rel = nn.sub(delta0, tg)
    ev = nn.mul(e_q0, vg)
    r_p = nn.sub(nn.mul(nn.mul(ev, nn.sin(rel)), 1.0 / xd), pg)
    r_q = nn.sub(nn.mul(nn.sub(nn.mul(ev, nn.cos(rel)), nn.square(vg)), 1.0 / xd), qg)
    nu_ic = nn.add(nn.smooth_abs(r_p, SMOOTH_EPS), nn.smooth_abs(r_q, SMOOTH_EPS))
    return delta0, e_q0, vg, tg, nu_ic


def _stability_graph(network: Network, surrogates, p, q, vm, va, delta_max,
                     tape):
    """Per-generator threshold-violation means through the surrogates.

    Returns ``(nu_stab (ng,) Var, nu_ic (ng,) Var, per_sample_worst (B, ng))``
    where the last is a plain array used for epoch statistics.
    """
    B = p.value.shape[0]
    nu_stab_cols = []
    nu_ic_cols = []
    worst = np.empty((B, len(surrogates)))
    for gi, s in enumerate(surrogates):
        delta0, _, vg, tg, nu_ic = _initial_conditions_tape(network, gi, p, q, vm, va)
        omega0 = np.full((B, 1), OMEGA_SYNC)
        x0 = nn.concat([delta0, omega0, vg, tg], axis=1)
        states = rollout_tape(s, x0, tape)
        deltas = nn.concat([nn.take_cols(st, 0, 1) for st in states], axis=1)
        peak = nn.amax(deltas, axis=1)
        viol = nn.hinge(nn.add(peak, -delta_max))
        worst[:, gi] = viol.value
        nu_stab_cols.append(nn.vmean(viol))
        nu_ic_cols.append(nn.vmean(nu_ic))
    return _stack_scalars(nu_stab_cols), _stack_scalars(nu_ic_cols), worst


def _stack_scalars(scalars):
    """Concatenate 0-d Vars into a (n,) Var."""
    tape = scalars[0]._tape
    rows = []
    for v in scalars:
        rows.append(tape.record(
            v.value.reshape(1),
            ((v, lambda g, shape=v.value.shape: g.reshape(shape)),)))
    values = [r.value for r in rows]
    out = np.concatenate(values)
    parents = []
    start = 0
    for r in rows:
        sl = slice(start, start + 1)
        parents.append((r, lambda g, sl=sl: g[sl]))
        start += 1
    return tape.record(out, tuple(parents))


def _weighted(terms: dict, lam: Multipliers):
    out = {}
    for k, mean_v in terms.items():
        out[k] = nn.vsum(nn.mul(mean_v, lam.values[k]))
    return out


def _pred_loss(pred_cat, label_cat):
    return nn.vmean(nn.vsum(nn.square(nn.sub(pred_cat, label_cat)), axis=1))


def dynopf_loss(network: Network, surrogates, loads: np.ndarray,
                labels: np.ndarray, lam: Multipliers, cfg: TrainerConfig,
                proxy: LtoProxy, tape: nn.GradientTape | None = None):
    """Full loss graph for one batch; returns (breakdown, graph dict).

    ``graph`` holds the recorded Vars: ``total`` (backpropagation root),
    ``mean_violations`` per family (for multiplier updates), and
    ``worst_stability`` per sample/generator when surrogates ran.
    """
    own_tape = tape is None
    if own_tape:
        tape = nn.GradientTape()
    p, q, vm, va = _predict_tape(proxy, loads, tape)
    pred_cat = nn.concat([p, q, vm, va], axis=1)
    pred = _pred_loss(pred_cat, labels)

    nb = network.n_bus
    loads_pd = loads[:, :nb]
    loads_qd = loads[:, nb:]
    mean_v = {}
    worst = None
    if cfg.mode == "baseline_ld" or (cfg.mode == "dynopf" and cfg.include_static):
        mean_v.update(_static_graph(network, p, q, vm, va, loads_pd, loads_qd))
    if cfg.mode == "dynopf":
        stab, ic, worst = _stability_graph(network, surrogates, p, q, vm, va,
                                           cfg.delta_max, tape)
        mean_v["stability"] = stab
        mean_v["init_cond"] = ic

    weighted = _weighted(mean_v, lam)
    total = pred
    for k in ALL_FAMILIES:
        if k in weighted:
            total = nn.add(total, weighted[k])
    if not np.isfinite(total.value):
        raise TrainingAborted("non-finite loss", {
            "pred": float(pred.value),
            "terms": {k: float(v.value) for k, v in weighted.items()}})
    breakdown = LossBreakdown.assemble(
        float(pred.value), {k: float(v.value) for k, v in weighted.items()})
    graph = {"tape": tape, "total": total, "pred": pred,
             "mean_violations": mean_v, "worst_stability": worst,
             "blocks": (p, q, vm, va)}
    return breakdown, graph


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

def _dataset_arrays(samples):
    loads = np.array([np.concatenate([s.load.p_d, s.load.q_d]) for s in samples])
    labels = np.array([np.concatenate([s.optimum.p_r, s.optimum.q_r,
                                       s.optimum.v_mag, s.optimum.v_ang])
                       for s in samples])
    return loads, labels


def _val_metrics(proxy: LtoProxy, network: Network, loads, labels):
    p, q, vm, va = predict_batch(proxy, loads)
    ng, nb = network.n_gen, network.n_bus
    lp = labels[:, :ng]
    lq = labels[:, ng:2 * ng]
    lvm = labels[:, 2 * ng:2 * ng + nb]
    lva = labels[:, 2 * ng + nb:]
    return {
        "val_mse_p": float(np.mean((p - lp) ** 2)),
        "val_mse_q": float(np.mean((q - lq) ** 2)),
        "val_mse_vm": float(np.mean((vm - lvm) ** 2)),
        "val_mse_va": float(np.mean((va - lva) ** 2)),
    }


def _surrogate_unstable_fraction(network, surrogates, proxy, loads, delta_max):
    """Fraction of profiles whose surrogate rollout crosses the threshold."""
    p, q, vm, va = predict_batch(proxy, loads)
    flags = np.zeros(len(loads), dtype=bool)
    for gi, s in enumerate(surrogates):
        gen = network.generators[gi]
        bus = gen.bus
        a = p[:, gi] * gen.x_d_prime
        c = q[:, gi] * gen.x_d_prime + vm[:, bus] ** 2
        delta0 = va[:, bus] + np.arctan2(a, c)
        x0 = np.stack([delta0, np.full(len(loads), OMEGA_SYNC),
                       vm[:, bus], va[:, bus]], axis=1)
        peaks = rollout(s, x0)[:, :, 0].max(axis=1)
        flags |= peaks > delta_max
    return float(flags.mean())


def train(samples: list, network: Network, surrogates: list,
          cfg: TrainerConfig, splits: dict) -> TrainResult:
    """Run the configured training mode over an OPF dataset.

    ``surrogates`` must be pretrained (hot start) for ``dynopf`` mode; the
    baselines never consult them.  Writes a config snapshot, per-epoch CSV
    log, and checkpoints into ``cfg.run_dir`` when set.  Deterministic for a
    fixed config and seed on a single thread.
    """
    if cfg.mode == "dynopf" and len(surrogates) != network.n_gen:
        raise ValueError("dynopf mode needs one pretrained surrogate per generator")
    loads, labels = _dataset_arrays(samples)
    tr = splits["train"]
    va_idx = splits["val"]
    loads_tr, labels_tr = loads[tr], labels[tr]
    loads_val, labels_val = loads[va_idx], labels[va_idx]

    in_mean = loads_tr.mean(axis=0)
    in_scale = np.maximum(loads_tr.std(axis=0), 1e-8)
    proxy = replace(new_proxy(network, cfg.seed, tuple(cfg.hidden)),
                    in_mean=in_mean, in_scale=in_scale)

    lam = Multipliers.zeros(network, cfg.rho)
    opt_psi = nn.OptimizerState(method="adam", lr=cfg.lr)
    opt_phi = [nn.OptimizerState(method="adam", lr=cfg.lr * cfg.phi_lr_scale)
               for _ in surrogates]
    surrogates = list(surrogates)

    rng = np.random.default_rng(cfg.seed)
    run_dir = cfg.run_dir
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as f:
            json.dump({"trainer": cfg.to_dict(), "tool_version": _tool_version()},
                      f, indent=1, sort_keys=True, default=str)

    epoch_log = []
    n = len(tr)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_updates = cfg.epochs * batches_per_epoch
    update = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = {"loss": 0.0, "pred": 0.0}
        term_sums = {}
        viol_sums = {}
        unstable = 0.0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            bsz = len(idx)
            lr_t = cfg.lr_at(update, total_updates)
            opt_psi.lr = lr_t
            for o in opt_phi:
                o.lr = lr_t * cfg.phi_lr_scale
            update += 1
            breakdown, graph = dynopf_loss(
                network, surrogates, loads_tr[idx], labels_tr[idx], lam, cfg, proxy)
            tape = graph["tape"]
            nn.backward(tape, 1.0, graph["total"])
            proxy = replace(proxy, net=nn.step(opt_psi, proxy.net,
                                               tape.gradients_of(proxy.net)))
            if cfg.mode == "dynopf" and not cfg.freeze_node:
                for gi, s in enumerate(surrogates):
                    grads = tape.gradients_of(s.field_net)
                    surrogates[gi] = replace(
                        s, field_net=nn.step(opt_phi[gi], s.field_net, grads))
            sums["loss"] += breakdown.total * bsz
            sums["pred"] += breakdown.pred * bsz
            for k, v in breakdown.terms.items():
                term_sums[k] = term_sums.get(k, 0.0) + v * bsz
            for k, v in graph["mean_violations"].items():
                viol_sums[k] = viol_sums.get(k, 0.0) + v.value * bsz
            if graph["worst_stability"] is not None:
                unstable += float((graph["worst_stability"] > 0).any(axis=1).sum())
            seen += bsz

        mean_viol = {k: v / seen for k, v in viol_sums.items()}
        if cfg.mode in ("dynopf", "baseline_ld"):
            lam = update_multipliers(lam, mean_viol)

        row = {"epoch": epoch,
               "train_loss": sums["loss"] / seen,
               "pred_term": sums["pred"] / seen}
        for k in ALL_FAMILIES:
            row[f"term_{k}"] = term_sums.get(k, 0.0) / seen
            mv = mean_viol.get(k)
            row[f"viol_{k}"] = float(np.sum(mv)) if mv is not None else 0.0
        row.update(_val_metrics(proxy, network, loads_val, labels_val))
        if cfg.mode == "dynopf":
            row["pct_unstable_train_surrogate"] = 100.0 * unstable / seen
        elif cfg.log_surrogate_stability and len(surrogates) == network.n_gen:
            row["pct_unstable_train_surrogate"] = 100.0 * _surrogate_unstable_fraction(
                network, surrogates, proxy, loads_tr, cfg.delta_max)
        row["lambda_total"] = lam.total()
        row["wall_time"] = time.perf_counter() - t0
        epoch_log.append(row)

        if run_dir:
            save_proxy(os.path.join(run_dir, "proxy_latest.json"), proxy,
                       seed=cfg.seed, epoch=epoch)
            _write_epoch_log(os.path.join(run_dir, "epochs.csv"), epoch_log)

    if run_dir:
        save_proxy(os.path.join(run_dir, "proxy_final.json"), proxy,
                   seed=cfg.seed, epoch=cfg.epochs - 1)
        from .node import save_surrogate
        for gi, s in enumerate(surrogates):
            save_surrogate(os.path.join(run_dir, f"node_gen{gi}_final.json"), s)
        with open(os.path.join(run_dir, "multipliers.json"), "w") as f:
            json.dump({k: v.tolist() for k, v in lam.values.items()},
                      f, indent=1, sort_keys=True)
    return TrainResult(proxy=proxy, surrogates=surrogates, multipliers=lam,
                       epoch_log=epoch_log, config=cfg)


def _write_epoch_log(path, epoch_log):
    keys = list(epoch_log[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in epoch_log:
            w.writerow({k: repr(v) if isinstance(v, float) else v
                        for k, v in row.items()})


def _tool_version() -> str:
    try:
        from importlib.metadata import version
        return version("dynopf")
    except Exception:
        return "unknown"


def save_proxy(path, proxy: LtoProxy, **kwargs):
    extra = {
        "n_bus": proxy.n_bus, "n_gen": proxy.n_gen, "ref_bus": proxy.ref_bus,
        "box_lo": proxy.box_lo.tolist(), "box_hi": proxy.box_hi.tolist(),
        "in_mean": proxy.in_mean.tolist(), "in_scale": proxy.in_scale.tolist(),
    }
    nn.save_checkpoint(path, proxy.net, extra=extra, **kwargs)


def load_proxy(path) -> LtoProxy:
    model, _, doc = nn.load_checkpoint(path)
    e = doc["extra"]
    return LtoProxy(net=model, n_bus=e["n_bus"], n_gen=e["n_gen"],
                    ref_bus=e["ref_bus"],
                    box_lo=np.array(e["box_lo"]), box_hi=np.array(e["box_hi"]),
                    in_mean=np.array(e["in_mean"]), in_scale=np.array(e["in_scale"]))
