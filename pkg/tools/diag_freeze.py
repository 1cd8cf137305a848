"""Diagnose the criterion-7 failure: does freezing phi fix seeds 2/3?"""
import os
import pickle
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from dynopf import grid, acopf, node, training as tr, evaluation as ev
from dynopf.dynamics import initial_conditions

CACHE = "/tmp/dynopf_acceptance_fixtures.pkl"
net = grid.load_bundled_case("wscc9")

if os.path.exists(CACHE):
    with open(CACHE, "rb") as f:
        samples, splits, surrs = pickle.load(f)
else:
    t0 = time.perf_counter()
    samples, splits = acopf.build_dataset(net, 1250, 0.2, seed=3,
                                          cfg=acopf.SolverConfig(n_starts=1))
    print(f"dataset: {time.perf_counter()-t0:.0f}s", flush=True)
    surrs = []
    specs = [(0, 20, 30, 1200, 25), (1, 21, 31, 2200, 30), (2, 22, 32, 1200, 25)]
    for gi, dseed, nseed, n, epochs in specs:
        data = node.sample_node_dataset(net, gi, n, seed=dseed)
        s, _ = node.train_node(node.new_surrogate(gi, seed=nseed + 10), data,
                               node.NodeTrainConfig(epochs=epochs, batch_size=128,
                                                    lr=2e-3, seed=nseed + 10))
        surrs.append(s)
        print(f"gen{gi} ready", flush=True)
    with open(CACHE, "wb") as f:
        pickle.dump((samples, splits, surrs), f)

peaks = []
for i in splits["train"]:
    s = samples[i]
    m = -np.inf
    for gi, gen in enumerate(net.generators):
        d0, _, _ = initial_conditions(gen, s.optimum.p_r[gi], s.optimum.q_r[gi],
                                      s.optimum.v_mag[gen.bus], s.optimum.v_ang[gen.bus])
        m = max(m, d0)
    peaks.append(m)
delta_max = float(np.quantile(peaks, 0.85))
print("delta_max:", round(delta_max, 4), flush=True)

for seed in (2, 3, 0):
    for freeze, rho in ((True, 10.0), (True, 20.0)):
        cfg = tr.TrainerConfig(mode="dynopf", epochs=50, batch_size=48, lr=8e-3,
                               rho=rho, include_static=False, delta_max=delta_max,
                               seed=seed, freeze_node=freeze)
        t0 = time.perf_counter()
        res = tr.train(samples, net, surrs, cfg, splits)
        rep = ev.evaluate_model(res.proxy, res.surrogates, samples, splits, net,
                                delta_max, timing_repeats=2,
                                include_surrogate_stability=True)
        print(f"seed {seed} freeze={freeze} rho={rho}: {time.perf_counter()-t0:.0f}s "
              f"unstable={rep.pct_unstable:.2f}% (surrogate-said "
              f"{rep.pct_unstable_surrogate:.2f}%) gap={rep.gap_mean:.3f}%",
              flush=True)
