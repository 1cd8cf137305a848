"""Per-generator neural-ODE surrogate of the swing dynamics.

The surrogate's vector field is a dense network over the augmented state
``(delta, omega, |V|, theta)``; the two voltage components carry zero
derivatives by construction, so they stay at their initial values and act
as conditioning inputs.  Inputs are standardized with dataset statistics
(``delta`` and ``omega - omega_s`` centered/scaled) and the network output
is rescaled to physical derivative units.

Inference and training integrate the field with fixed-step RK4 on the
canonical 31-point grid (30 steps of 0.1 s over 3 s).  Supervision targets
come from the adaptive true-field integrator resampled onto the same grid.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from . import neural as nn
from .dynamics import (
    IntegratorConfig,
    NonFiniteError,
    OMEGA_SYNC,
    StepLimitError,
    Trajectory,
    canonical_grid,
    initial_conditions,
    integrate,
    machine_params_from_dispatch,
    sample_on_grid,
    swing_field,
)
from .grid import Network
from .acopf import split_indices

__all__ = [
    "NodeSurrogate",
    "NodeDataset",
    "NodeTrainConfig",
    "TrainingDiverged",
    "new_surrogate",
    "sample_node_dataset",
    "node_forward",
    "rollout",
    "rollout_tape",
    "train_node",
    "node_error",
    "bench_node_vs_solver",
    "save_node_dataset",
    "load_node_dataset",
    "save_surrogate",
    "load_surrogate",
]

#: loss-side clip for runaway rotor angles; stability metrics use raw values
DELTA_CLIP = 4.0 * np.pi

_FIELD_WIDTHS = (4, 64, 64, 4)
_FIELD_ACTS = ("tanh", "tanh", "identity")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class NodeSurrogate:
    """Trained vector-field network plus its integrator and normalization."""

    field_net: nn.DenseNet
    gen_index: int
    x_mean: np.ndarray      # (4,) state offsets
    x_scale: np.ndarray     # (4,) state scales
    out_scale: np.ndarray   # (2,) physical derivative scale of (delta, omega)
    dt: float = 0.1
    n_steps: int = 30

    def __post_init__(self):
        if self.field_net.widths[0] != 4 or self.field_net.widths[-1] != 4:
            raise ValueError("field network must map width 4 to width 4")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.dt * self.n_steps, self.n_steps + 1)


def new_surrogate(gen_index: int, seed: int,
                  widths=_FIELD_WIDTHS, activations=_FIELD_ACTS) -> NodeSurrogate:
    """Freshly initialized surrogate with identity normalization."""
    return NodeSurrogate(
        field_net=nn.DenseNet.init(widths, activations, seed),
        gen_index=gen_index,
        x_mean=np.array([0.0, OMEGA_SYNC, 1.0, 0.0]),
        x_scale=np.ones(4),
        out_scale=np.full(2, 1e-3),
    )


@dataclass(frozen=True)
class NodeDataset:
    """Extended initial conditions with true-field target trajectories."""

    gen_index: int
    x0: np.ndarray        # (n, 4): delta0, omega0, |V|, theta
    dispatch: np.ndarray  # (n, 2): p_r, q_r that generated the instance
    targets: np.ndarray   # (n, T, 2): (delta, omega) on the canonical grid
    grid: np.ndarray      # (T,)
    splits: dict
    seed: int
    resampled: int = 0

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    def split_arrays(self, split: str):
        idx = self.splits[split]
        return self.x0[idx], self.targets[idx]


def _theta_band(net: Network) -> float:
    return float(net.angle_limit.max())


def sample_node_dataset(net: Network, gen_index: int, n: int, seed: int,
                        integrator: IntegratorConfig | None = None,
                        redraw_budget: int = 5) -> NodeDataset:
    """Sample machine instances across the generator's operational box.

    Per sample, the dispatch quantities are drawn uniformly inside their
    limits (active/reactive power in the generator's bounds, voltage in the
    bus bounds, angle in the widest line angle band around 0), the
    steady-state initial conditions are solved in closed form with the
    mechanical power matched to the drawn active power, and the true field
    is integrated with the adaptive order-5 integrator.  Both threshold-safe
    and threshold-crossing instances are retained.
    """
    if n < 10:
        raise ValueError("need at least 10 samples for an 80/10/10 split")
    gen = net.generators[gen_index]
    bus = net.buses[gen.bus]
    cfg = integrator or IntegratorConfig(method="dopri5")
    grid_t = canonical_grid(cfg.horizon)
    band = _theta_band(net)
    rng = np.random.default_rng(seed)

    x0 = np.empty((n, 4))
    dispatch = np.empty((n, 2))
    targets = np.empty((n, len(grid_t), 2))
    resampled = 0
    for i in range(n):
        for attempt in range(redraw_budget):
            p_r = rng.uniform(gen.p_min, gen.p_max)
            q_r = rng.uniform(gen.q_min, gen.q_max)
            v_mag = rng.uniform(bus.v_min, bus.v_max)
            theta = rng.uniform(-band, band)
            delta0, _, omega0 = initial_conditions(gen, p_r, q_r, v_mag, theta)
            params = machine_params_from_dispatch(gen, p_r, q_r, v_mag, theta)
            try:
                traj = integrate(swing_field(params), np.array([delta0, omega0]), cfg)
            except (StepLimitError, NonFiniteError):
                resampled += 1
                continue
            x0[i] = (delta0, omega0, v_mag, theta)
            dispatch[i] = (p_r, q_r)
            targets[i] = sample_on_grid(traj, grid_t)
            break
        else:
            raise RuntimeError(f"sample {i}: integration failed {redraw_budget} times")
    return NodeDataset(gen_index=gen_index, x0=x0, dispatch=dispatch,
                       targets=targets, grid=grid_t,
                       splits=split_indices(n, seed), seed=seed,
                       resampled=resampled)


# --------------------------------------------------------------------------
# Rollouts: plain numpy inference and tape-recorded training path
# --------------------------------------------------------------------------

def _field_numpy(s: NodeSurrogate, x: np.ndarray) -> np.ndarray:
    """Physical-units derivative of the active components; x is (B, 4)."""
    z = (x - s.x_mean) / s.x_scale
    out = nn.forward(s.field_net, z)
    return out[:, :2] * s.out_scale


def rollout(s: NodeSurrogate, x0: np.ndarray) -> np.ndarray:
    """Batched fixed-step RK4 rollout; returns states (B, n_steps+1, 2)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    B = x0.shape[0]
    vt = x0[:, 2:]
    state = x0[:, :2]
    out = np.empty((B, s.n_steps + 1, 2))
    out[:, 0] = state
    h = s.dt
    for k in range(s.n_steps):
        k1 = _field_numpy(s, np.concatenate([state, vt], axis=1))
        k2 = _field_numpy(s, np.concatenate([state + (h / 2) * k1, vt], axis=1))
        k3 = _field_numpy(s, np.concatenate([state + (h / 2) * k2, vt], axis=1))
        k4 = _field_numpy(s, np.concatenate([state + h * k3, vt], axis=1))
        state = state + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, k + 1] = state
    if not np.all(np.isfinite(state)):
        raise NonFiniteError("surrogate rollout produced non-finite states")
    return out


def node_forward(s: NodeSurrogate, x0) -> Trajectory:
    """Trajectory of the full augmented state for one initial condition."""
    x0 = np.asarray(x0, dtype=np.float64)
    states2 = rollout(s, x0[None, :])[0]
    vt = np.broadcast_to(x0[2:], (states2.shape[0], 2))
    states = np.concatenate([states2, vt], axis=1)
    return Trajectory(s.grid, states)


def _field_tape(s: NodeSurrogate, state, zvt, tape):
    """Tape-recorded field: ``state`` is a (B,2) Var, ``zvt`` the normalized
    constant voltage block."""
    z_act = nn.mul(nn.sub(state, s.x_mean[:2]), 1.0 / s.x_scale[:2])
    z = nn.concat([z_act, zvt], axis=1)
    out = nn.forward(s.field_net, z, tape)
    return nn.mul(nn.take_cols(out, 0, 2), s.out_scale)


def rollout_tape(s: NodeSurrogate, x0, tape: nn.GradientTape) -> list:
    """Differentiable rollout; returns the list of per-grid-point (B,2) Vars.

    ``x0`` may be a (B,4) array or a Var carrying gradients from upstream
    predictions (the channel through which threshold violations reach the
    dispatch proxy).
    """
    if not isinstance(x0, nn.Var):
        x0 = tape.leaf(np.atleast_2d(np.asarray(x0, dtype=np.float64)))
    state = nn.take_cols(x0, 0, 2)
    vt = nn.take_cols(x0, 2, 4)
    zvt = nn.mul(nn.sub(vt, s.x_mean[2:]), 1.0 / s.x_scale[2:])
    states = [state]
    h = s.dt
    for _ in range(s.n_steps):
        k1 = _field_tape(s, state, zvt, tape)
        k2 = _field_tape(s, nn.add(state, nn.mul(k1, h / 2)), zvt, tape)
        k3 = _field_tape(s, nn.add(state, nn.mul(k2, h / 2)), zvt, tape)
        k4 = _field_tape(s, nn.add(state, nn.mul(k3, h)), zvt, tape)
        incr = nn.add(nn.add(k1, nn.mul(nn.add(k2, k3), 2.0)), k4)
        state = nn.add(state, nn.mul(incr, h / 6))
        states.append(state)
    return states


# --------------------------------------------------------------------------
# Supervised training
# --------------------------------------------------------------------------

@dataclass
class NodeTrainConfig:
    epochs: int = 80
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    divergence_factor: float = 10.0


def _normalization_from(x0: np.ndarray, targets: np.ndarray, grid: np.ndarray):
    """Standardization constants from the training arrays.

    The frequency channel is centered at the synchronous value; scales are
    floored so degenerate (constant) channels stay well-conditioned.
    """
    clipped = targets.copy()
    clipped[..., 0] = np.clip(clipped[..., 0], -DELTA_CLIP, DELTA_CLIP)
    mean = np.array([
        float(clipped[..., 0].mean()),
        OMEGA_SYNC,
        float(x0[:, 2].mean()),
        float(x0[:, 3].mean()),
    ])
    scale = np.array([
        max(float(clipped[..., 0].std()), 1e-3),
        max(float(clipped[..., 1].std()), 1e-2),
        max(float(x0[:, 2].std()), 1e-3),
        max(float(x0[:, 3].std()), 1e-3),
    ])
    dt_grid = np.diff(grid)[:, None]
    rates = np.diff(clipped, axis=1) / dt_grid
    out_scale = np.array([
        max(float(rates[..., 0].std()), 1e-3),
        max(float(rates[..., 1].std()), 1e-3),
    ])
    return mean, scale, out_scale


def _clipped(targets: np.ndarray) -> np.ndarray:
    out = targets.copy()
    out[..., 0] = np.clip(out[..., 0], -DELTA_CLIP, DELTA_CLIP)
    return out


def _batch_loss(s: NodeSurrogate, x0_b, tgt_b, tape):
    states = rollout_tape(s, x0_b, tape)
    pred = nn.concat(states, axis=1)                      # (B, 2*(T))
    flat = tgt_b.reshape(tgt_b.shape[0], -1)
    return nn.vmean(nn.square(nn.sub(pred, flat)))


def _eval_loss(s: NodeSurrogate, x0_e, tgt_e) -> float:
    pred = rollout(s, x0_e)
    return float(np.mean((pred - tgt_e) ** 2))


def train_node(s: NodeSurrogate, data: NodeDataset,
               cfg: NodeTrainConfig = NodeTrainConfig()):
    """Minimize mean squared trajectory error on the training split.

    Normalization constants are refit from the training split before the
    first step.  Returns ``(surrogate, history)`` where history carries the
    per-epoch train/validation losses.  Raises :class:`TrainingDiverged`
    when the validation loss exceeds ``divergence_factor`` times its initial
    value.
    """
    x0_tr, tgt_tr = data.split_arrays("train")
    x0_val, tgt_val = data.split_arrays("val")
    if len(x0_tr) == 0:
        raise ValueError("empty training split")
    tgt_tr = _clipped(tgt_tr)
    tgt_val = _clipped(tgt_val)
    mean, scale, out_scale = _normalization_from(x0_tr, tgt_tr, data.grid)
    s = replace(s, x_mean=mean, x_scale=scale, out_scale=out_scale)

    rng = np.random.default_rng(cfg.seed)
    opt = nn.OptimizerState(method="adam", lr=cfg.lr)
    model = s.field_net
    history = {"train_loss": [], "val_loss": []}
    val0 = None
    n = len(x0_tr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cur = replace(s, field_net=model)
            tape = nn.GradientTape()
            loss = _batch_loss(cur, x0_tr[idx], tgt_tr[idx], tape)
            nn.backward(tape)
            model = nn.step(opt, model, tape.gradients_of(model))
            epoch_loss += float(loss.value) * len(idx)
        cur = replace(s, field_net=model)
        val_loss = _eval_loss(cur, x0_val, tgt_val) if len(x0_val) else float("nan")
        history["train_loss"].append(epoch_loss / n)
        history["val_loss"].append(val_loss)
        if len(x0_val):
            if val0 is None:
                val0 = max(val_loss, 1e-300)
            elif val_loss > cfg.divergence_factor * val0:
                raise TrainingDiverged(
                    f"validation loss {val_loss:.3e} exceeded "
                    f"{cfg.divergence_factor}x initial {val0:.3e} at epoch {epoch}",
                    history)
    return replace(s, field_net=model), history


def node_error(s: NodeSurrogate, data: NodeDataset, split: str) -> float:
    """Percentage l2 trajectory error against the stored targets.

    Per sample: ``100 * ||pred - target||_2 / ||target||_2`` over all grid
    points and both active state components, then averaged over the split.
    """
    x0_e, tgt_e = data.split_arrays(split)
    if len(x0_e) == 0:
        raise ValueError(f"split {split!r} is empty")
    pred = rollout(s, x0_e)
    num = np.linalg.norm((pred - tgt_e).reshape(len(x0_e), -1), axis=1)
    den = np.linalg.norm(tgt_e.reshape(len(x0_e), -1), axis=1)
    return float(np.mean(100.0 * num / den))


# --------------------------------------------------------------------------
# Timing comparison against the true-field integrator
# --------------------------------------------------------------------------

def bench_node_vs_solver(s: NodeSurrogate, net: Network, data: NodeDataset,
                         indices=None, methods=("dopri5", "bosh3"),
                         integrator: IntegratorConfig | None = None) -> dict:
    """Wall-time comparison: adaptive true-field integration per instance
    versus surrogate inference.

    Surrogate inference is data-parallel by construction (fixed step count),
    so the amortized per-instance time of one batched rollout is reported
    alongside a sequential per-instance loop.
    """
    gen = net.generators[s.gen_index]
    if indices is None:
        indices = data.splits["test"]
    indices = np.asarray(indices)
    base = integrator or IntegratorConfig(method="dopri5")
    report = {"n_instances": int(len(indices))}

    for method in methods:
        cfg = replace(base, method=method)
        times = []
        for i in indices:
            p_r, q_r = data.dispatch[i]
            _, _, v_mag, theta = data.x0[i]
            params = machine_params_from_dispatch(gen, p_r, q_r, v_mag, theta)
            fld = swing_field(params)
            x0 = data.x0[i, :2].copy()
            t0 = time.perf_counter()
            integrate(fld, x0, cfg)
            times.append(time.perf_counter() - t0)
        report[f"solver_{method}_mean"] = float(np.mean(times))
        report[f"solver_{method}_std"] = float(np.std(times))

    xb = data.x0[indices]
    rollout(s, xb[: min(8, len(xb))])  # warm up allocator and caches
    t0 = time.perf_counter()
    rollout(s, xb)
    batch_total = time.perf_counter() - t0
    report["surrogate_batched_total"] = float(batch_total)
    report["surrogate_batched_per_instance"] = float(batch_total / len(indices))

    times = []
    for i in indices[: min(64, len(indices))]:
        x0 = data.x0[i:i + 1]
        t0 = time.perf_counter()
        rollout(s, x0)
        times.append(time.perf_counter() - t0)
    report["surrogate_sequential_mean"] = float(np.mean(times))
    report["surrogate_sequential_std"] = float(np.std(times))
    return report


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def save_node_dataset(path_csv, data: NodeDataset, path_manifest=None):
    tags = {}
    for name in ("train", "val", "test"):
        for i in data.splits[name]:
            tags[int(i)] = name
    T = len(data.grid)
    header = (["id", "split", "delta0", "omega0", "vmag", "theta", "pr", "qr"]
              + [f"delta_{k}" for k in range(T)] + [f"omega_{k}" for k in range(T)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(data.n):
        row = [str(i), tags[i]]
        row.extend(repr(float(v)) for v in data.x0[i])
        row.extend(repr(float(v)) for v in data.dispatch[i])
        row.extend(repr(float(v)) for v in data.targets[i, :, 0])
        row.extend(repr(float(v)) for v in data.targets[i, :, 1])
        w.writerow(row)
    with open(path_csv, "w") as f:
        f.write(buf.getvalue())
    if path_manifest is None:
        path_manifest = str(path_csv) + ".manifest.json"
    with open(path_manifest, "w") as f:
        json.dump({"format_version": 1, "gen_index": data.gen_index,
                   "n": data.n, "seed": data.seed, "resampled": data.resampled,
                   "grid": data.grid.tolist()}, f, indent=1, sort_keys=True)


def load_node_dataset(path_csv, path_manifest=None) -> NodeDataset:
    if path_manifest is None:
        path_manifest = str(path_csv) + ".manifest.json"
    with open(path_manifest) as f:
        meta = json.load(f)
    grid_t = np.array(meta["grid"])
    T = len(grid_t)
    with open(path_csv) as f:
        rows = list(csv.reader(f))
    n = len(rows) - 1
    x0 = np.empty((n, 4))
    dispatch = np.empty((n, 2))
    targets = np.empty((n, T, 2))
    split_lists = {"train": [], "val": [], "test": []}
    for row in rows[1:]:
        i = int(row[0])
        split_lists[row[1]].append(i)
        vals = [float(v) for v in row[2:]]
        x0[i] = vals[0:4]
        dispatch[i] = vals[4:6]
        targets[i, :, 0] = vals[6:6 + T]
        targets[i, :, 1] = vals[6 + T:6 + 2 * T]
    splits = {k: np.array(sorted(v), dtype=np.intp) for k, v in split_lists.items()}
    return NodeDataset(gen_index=meta["gen_index"], x0=x0, dispatch=dispatch,
                       targets=targets, grid=grid_t, splits=splits,
                       seed=meta["seed"], resampled=meta["resampled"])


def save_surrogate(path, s: NodeSurrogate, **kwargs):
    extra = {
        "gen_index": s.gen_index,
        "x_mean": s.x_mean.tolist(),
        "x_scale": s.x_scale.tolist(),
        "out_scale": s.out_scale.tolist(),
        "dt": s.dt,
        "n_steps": s.n_steps,
    }
    extra.update(kwargs.pop("extra", {}))
    nn.save_checkpoint(path, s.field_net, extra=extra, **kwargs)


def load_surrogate(path) -> NodeSurrogate:
    model, _, doc = nn.load_checkpoint(path)
    e = doc["extra"]
    return NodeSurrogate(field_net=model, gen_index=e["gen_index"],
                         x_mean=np.array(e["x_mean"]),
                         x_scale=np.array(e["x_scale"]),
                         out_scale=np.array(e["out_scale"]),
                         dt=e["dt"], n_steps=e["n_steps"])
