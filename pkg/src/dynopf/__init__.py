"""Stability-constrained AC-OPF learning toolkit.

A dispatch proxy maps load profiles to AC-OPF decision vectors while
per-generator neural-ODE surrogates of the swing dynamics let rotor-angle
threshold violations backpropagate into the proxy through a
Lagrangian-dual training scheme.

Modules
-------
grid        network data model, case parsing, load perturbation
acopf       steady-state OPF equations, reference solver, datasets
dynamics    classical machine model, ODE integrators, stability margins
neural      float64 tensors, reverse-mode autodiff, dense nets, optimizers
node        neural-ODE surrogates: sampling, rollout, training, benchmarks
training    dispatch proxy, constrained loss, multipliers, trainer
evaluation  test-set metrics and timing benchmarks
cli         command-line workflows (``dynopf --help``)
"""

from . import acopf, dynamics, evaluation, grid, neural, node, training

__all__ = ["acopf", "dynamics", "evaluation", "grid", "neural", "node",
           "training"]

try:
    from importlib.metadata import version as _version
    __version__ = _version("dynopf")
except Exception:  # pragma: no cover - not installed
    __version__ = "unknown"
