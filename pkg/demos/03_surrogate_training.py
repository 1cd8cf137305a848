"""Train one generator's neural-ODE surrogate and benchmark it.

Samples machine instances across the generator's operating box, trains the
vector-field network on true-field trajectories, reports the held-out
percentage trajectory error, and compares inference cost against the
adaptive integrator.  Takes a few minutes at this demo size.
"""

import time

import numpy as np

from dynopf import grid, node

net = grid.load_bundled_case("wscc9")
GEN = 1

t0 = time.perf_counter()
data = node.sample_node_dataset(net, GEN, n=600, seed=11)
print(f"sampled {data.n} machine instances in {time.perf_counter()-t0:.0f}s "
      f"(resampled {data.resampled})")
peaks = data.targets[:, :, 0].max(axis=1)
print(f"rotor-angle range across instances: [{peaks.min():.3f}, {peaks.max():.3f}] rad")
print(f"instances above a 0.5 rad threshold: {(peaks > 0.5).sum()}\n")

t0 = time.perf_counter()
surrogate, history = node.train_node(
    node.new_surrogate(GEN, seed=3), data,
    node.NodeTrainConfig(epochs=20, batch_size=128, lr=2e-3, seed=5))
print(f"trained 20 epochs in {time.perf_counter()-t0:.0f}s")
print(f"train loss: {history['train_loss'][0]:.3e} -> {history['train_loss'][-1]:.3e}")
print(f"held-out trajectory error: {node.node_error(surrogate, data, 'test'):.4f}%\n")

report = node.bench_node_vs_solver(surrogate, net, data,
                                   indices=np.arange(100), methods=("dopri5",))
solver_ms = report["solver_dopri5_mean"] * 1e3
batched_us = report["surrogate_batched_per_instance"] * 1e6
print("timing over 100 instances:")
print(f"  true-field dopri5:        {solver_ms:8.2f} ms/instance")
print(f"  surrogate (batched):      {batched_us/1e3:8.3f} ms/instance amortized")
print(f"  surrogate (sequential):   {report['surrogate_sequential_mean']*1e3:8.2f} ms/instance")
print(f"  speedup (batched):        {solver_ms*1e3/batched_us:8.0f}x")
