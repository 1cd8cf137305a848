"""Command-line entry point.

Subcommands cover the full workflow: case validation, dataset generation
(optimal dispatch labels and machine trajectories), surrogate pretraining,
joint proxy training in any of the three modes, evaluation, single-machine
simulation, and timing benchmarks.  Every subcommand writes a config
snapshot and the tool version into its output directory so a run is
reproducible from the snapshot plus the bundled case files.

Flags may also be supplied through ``--config FILE`` (JSON mapping of flag
names to values); explicit flags win.  ``--threads`` (or the
``DYNOPF_THREADS`` environment variable) caps worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import acopf, evaluation, grid, node, training
from .dynamics import (IntegratorConfig, initial_conditions,
                       machine_params_from_dispatch, integrate, swing_field,
                       stability_check, sample_on_grid, canonical_grid)


def _tool_version() -> str:
    try:
        from importlib.metadata import version
        return version("dynopf")
    except Exception:
        return "unknown"


def _load_case(spec: str) -> grid.Network:
    if os.path.exists(spec):
        with open(spec) as f:
            return grid.parse_case(f.read())
    return grid.load_bundled_case(spec)


def _write_snapshot(out_dir: str, command: str, args: dict):
    os.makedirs(out_dir, exist_ok=True)
    snap = {"command": command, "tool_version": _tool_version(),
            "args": {k: v for k, v in args.items() if k != "func"}}
    with open(os.path.join(out_dir, "cli_config.json"), "w") as f:
        json.dump(snap, f, indent=1, sort_keys=True, default=str)


def _fail(kind: str, message: str, code: int = 1):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    raise SystemExit(code)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_case_validate(args):
    try:
        with open(args.file) as f:
            text = f.read()
    except FileNotFoundError:
        try:
            net = grid.load_bundled_case(args.file)
        except KeyError as e:
            _fail("not_found", str(e))
        else:
            text = grid.serialize_network(net)
    try:
        net = grid.parse_case(text)
    except grid.CaseSyntaxError as e:
        _fail("syntax", str(e))
    except grid.CaseSemanticError as e:
        _fail("semantic", str(e))
    print(json.dumps({
        "ok": True,
        "buses": net.n_bus, "lines": net.n_line, "generators": net.n_gen,
        "reference_bus": net.reference_bus,
        "hash": grid.network_hash(net),
    }, indent=1))


def cmd_gen_data(args):
    net = _load_case(args.case)
    cfg = acopf.SolverConfig(n_starts=args.starts, seed=args.seed)
    try:
        samples, splits = acopf.build_dataset(
            net, args.n, args.perturb, args.seed, cfg, threads=args.threads)
    except (acopf.InfeasibleError, acopf.NoConvergenceError, RuntimeError) as e:
        _fail("solver", str(e))
    _write_snapshot(args.out, "gen-data", vars(args))
    path = os.path.join(args.out, "opf_dataset.csv")
    manifest = acopf.dataset_manifest(net, args.n, args.perturb, args.seed, cfg)
    acopf.save_dataset(path, samples, splits, manifest)
    print(json.dumps({"ok": True, "samples": len(samples), "csv": path,
                      "split_sizes": {k: int(len(v)) for k, v in splits.items()}}))


def cmd_gen_node_data(args):
    net = _load_case(args.case)
    if not 0 <= args.gen < net.n_gen:
        _fail("args", f"generator index {args.gen} outside 0..{net.n_gen - 1}")
    data = node.sample_node_dataset(net, args.gen, args.n, args.seed)
    _write_snapshot(args.out, "gen-node-data", vars(args))
    path = os.path.join(args.out, f"node_dataset_gen{args.gen}.csv")
    node.save_node_dataset(path, data)
    print(json.dumps({"ok": True, "samples": data.n, "csv": path,
                      "resampled": data.resampled}))


def cmd_train_node(args):
    net = _load_case(args.case)
    data = node.load_node_dataset(args.data)
    cfg = node.NodeTrainConfig(epochs=args.epochs, batch_size=args.batch,
                               lr=args.lr, seed=args.seed)
    sur = node.new_surrogate(data.gen_index, seed=args.seed)
    try:
        sur, hist = node.train_node(sur, data, cfg)
    except node.TrainingDiverged as e:
        _fail("diverged", str(e))
    _write_snapshot(args.out, "train-node", vars(args))
    ckpt = os.path.join(args.out, f"node_gen{data.gen_index}.json")
    node.save_surrogate(ckpt, sur, seed=args.seed, epoch=args.epochs - 1)
    curve = os.path.join(args.out, f"node_gen{data.gen_index}_loss.csv")
    with open(curve, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for i, (a, b) in enumerate(zip(hist["train_loss"], hist["val_loss"])):
            f.write(f"{i},{a!r},{b!r}\n")
    err = node.node_error(sur, data, "test")
    print(json.dumps({"ok": True, "checkpoint": ckpt, "loss_curve": curve,
                      "test_pct_l2_error": err}))


def cmd_train(args):
    net = _load_case(args.case)
    samples, splits = acopf.load_dataset(args.data)
    surrogates = []
    if args.node_ckpts:
        for path in args.node_ckpts.split(","):
            surrogates.append(node.load_surrogate(path))
        surrogates.sort(key=lambda s: s.gen_index)
    if args.mode == "dynopf" and len(surrogates) != net.n_gen:
        _fail("args", f"dynopf mode needs {net.n_gen} surrogate checkpoints "
                      f"(--node-ckpts), got {len(surrogates)}")
    cfg = training.TrainerConfig(
        mode=args.mode, epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        rho=args.rho, delta_max=args.delta_max, seed=args.seed,
        freeze_node=args.freeze_node, include_static=not args.no_static,
        run_dir=args.out, node_checkpoints=(args.node_ckpts or "").split(","))
    _write_snapshot(args.out, "train", vars(args))
    with open(os.path.join(args.out, "dataset_path.json"), "w") as f:
        json.dump({"case": args.case, "data": os.path.abspath(args.data)}, f)
    try:
        result = training.train(samples, net, surrogates, cfg, splits)
    except training.TrainingAborted as e:
        _fail("diverged", f"{e}: {e.diagnostics}")
    last = result.epoch_log[-1]
    print(json.dumps({"ok": True, "run_dir": args.out,
                      "final_train_loss": last["train_loss"],
                      "epochs": len(result.epoch_log)}))


def _load_run(run_dir: str):
    with open(os.path.join(run_dir, "dataset_path.json")) as f:
        ptr = json.load(f)
    net = _load_case(ptr["case"])
    samples, splits = acopf.load_dataset(ptr["data"])
    proxy = training.load_proxy(os.path.join(run_dir, "proxy_final.json"))
    surrogates = []
    for gi in range(net.n_gen):
        path = os.path.join(run_dir, f"node_gen{gi}_final.json")
        if os.path.exists(path):
            surrogates.append(node.load_surrogate(path))
    with open(os.path.join(run_dir, "config.json")) as f:
        cfg = json.load(f)["trainer"]
    return net, samples, splits, proxy, surrogates, cfg


def cmd_evaluate(args):
    try:
        net, samples, splits, proxy, surrogates, cfg = _load_run(args.run_dir)
    except FileNotFoundError as e:
        _fail("not_found", str(e))
    report = evaluation.evaluate_model(
        proxy, surrogates, samples, splits, net, cfg["delta_max"],
        split=args.split, config_hash=grid.network_hash(net))
    out = args.out or args.run_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w") as f:
        f.write(report.to_json())
    keys, row = report.csv_row()
    with open(os.path.join(out, "report.csv"), "w") as f:
        f.write(",".join(keys) + "\n")
        f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    idx = splits[args.split][: args.trajectories]
    evaluation.export_trajectories(
        os.path.join(out, "trajectories.csv"), net, proxy, surrogates,
        samples, idx, cfg["delta_max"])
    print(report.to_json())


def cmd_simulate(args):
    net = _load_case(args.case)
    if not 0 <= args.gen < net.n_gen:
        _fail("args", f"generator index {args.gen} outside 0..{net.n_gen - 1}")
    if args.dispatch_file:
        with open(args.dispatch_file) as f:
            doc = json.load(f)
        d = acopf.DispatchPoint(np.array(doc["p_r"]), np.array(doc["q_r"]),
                                np.array(doc["v_mag"]), np.array(doc["v_ang"]))
    else:
        sample = acopf.solve_reference(net, grid.perturb_loads(net, 0.0, 0),
                                       acopf.SolverConfig(n_starts=2))
        d = sample.optimum
    gen = net.generators[args.gen]
    bus = gen.bus
    delta0, _, omega0 = initial_conditions(
        gen, d.p_r[args.gen], d.q_r[args.gen], d.v_mag[bus], d.v_ang[bus])
    params = machine_params_from_dispatch(
        gen, d.p_r[args.gen], d.q_r[args.gen], d.v_mag[bus], d.v_ang[bus])
    cfg = IntegratorConfig(method=args.method, horizon=args.horizon)
    traj = integrate(swing_field(params), np.array([delta0, omega0]), cfg)
    stable, margin, worst = stability_check(traj, args.delta_max)
    _write_snapshot(args.out, "simulate", vars(args))
    path = os.path.join(args.out, f"trajectory_gen{args.gen}.csv")
    with open(path, "w") as f:
        f.write("t,delta,omega,v_mag,v_ang\n")
        vm, vaa = float(d.v_mag[bus]), float(d.v_ang[bus])
        for t, (dd, ww) in zip(traj.times, traj.states):
            f.write(f"{float(t)!r},{float(dd)!r},{float(ww)!r},{vm!r},{vaa!r}\n")
    verdict = {"stable": bool(stable), "margin": margin, "worst_violation": worst,
               "delta_max": args.delta_max, "csv": path}
    with open(os.path.join(args.out, "verdict.json"), "w") as f:
        json.dump(verdict, f, indent=1, sort_keys=True)
    print(json.dumps(verdict))


def cmd_bench(args):
    try:
        net, samples, splits, proxy, surrogates, cfg = _load_run(args.run_dir)
    except FileNotFoundError as e:
        _fail("not_found", str(e))
    out = args.out or args.run_dir
    os.makedirs(out, exist_ok=True)
    models = {"proxy_only": (proxy, [])}
    if surrogates:
        models["proxy_plus_surrogates"] = (proxy, surrogates)
    table4 = evaluation.bench_inference(models, net, samples, repeats=args.repeats)
    result = {"inference": table4}
    if surrogates:
        data = node.sample_node_dataset(net, surrogates[0].gen_index,
                                        max(100, args.repeats), seed=0)
        result["node_vs_solver"] = node.bench_node_vs_solver(
            surrogates[0], net, data, indices=np.arange(min(100, data.n)))
    with open(os.path.join(out, "bench.json"), "w") as f:
        json.dump(result, f, indent=1, sort_keys=True)
    print(json.dumps(result, indent=1, sort_keys=True))


# --------------------------------------------------------------------------
# parser plumbing
# --------------------------------------------------------------------------

def _apply_config_file(parser, argv, namespace):
    """Fill unset flags from --config JSON; explicit flags win."""
    if namespace.config:
        with open(namespace.config) as f:
            doc = json.load(f)
        defaults = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(defaults) - set(vars(namespace))
        if unknown:
            _fail("config", f"unknown config keys: {sorted(unknown)}")
        cli_set = set()
        for tok in argv:
            if tok.startswith("--"):
                cli_set.add(tok[2:].split("=")[0].replace("-", "_"))
        for k, v in defaults.items():
            if k not in cli_set:
                setattr(namespace, k, v)
    return namespace


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dynopf",
        description="Stability-constrained AC-OPF learning toolkit")
    p.add_argument("--version", action="version", version=_tool_version())
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON file of flag defaults (flags win)")
        sp.add_argument("--threads", type=int,
                        default=int(os.environ.get("DYNOPF_THREADS", "1")),
                        help="worker parallelism cap (env DYNOPF_THREADS)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    case = sub.add_parser("case", help="case-file utilities")
    case_sub = case.add_subparsers(dest="case_cmd", required=True)
    v = case_sub.add_parser("validate", help="parse a case and report invariants")
    v.add_argument("file", help="case file path or bundled case name")
    v.set_defaults(func=cmd_case_validate, needs_config=False)

    g = sub.add_parser("gen-data", help="build a solver-labeled OPF dataset")
    g.add_argument("case")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--perturb", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--starts", type=int, default=2)
    common(g)
    g.set_defaults(func=cmd_gen_data)

    gn = sub.add_parser("gen-node-data", help="build machine trajectory datasets")
    gn.add_argument("case")
    gn.add_argument("--gen", type=int, required=True)
    gn.add_argument("--n", type=int, required=True)
    gn.add_argument("--seed", type=int, default=0)
    common(gn)
    gn.set_defaults(func=cmd_gen_node_data)

    tn = sub.add_parser("train-node", help="train one generator surrogate")
    tn.add_argument("case")
    tn.add_argument("--gen", type=int, required=True)
    tn.add_argument("--data", required=True)
    tn.add_argument("--epochs", type=int, default=80)
    tn.add_argument("--batch", type=int, default=128)
    tn.add_argument("--lr", type=float, default=1e-3)
    tn.add_argument("--seed", type=int, default=0)
    common(tn)
    tn.set_defaults(func=cmd_train_node)

    t = sub.add_parser("train", help="train the dispatch proxy")
    t.add_argument("case")
    t.add_argument("--mode", choices=("dynopf", "baseline_mse", "baseline_ld"),
                   required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--node-ckpts", default="",
                   help="comma-separated surrogate checkpoints (hot start)")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=2e-3)
    t.add_argument("--rho", type=float, default=0.1)
    t.add_argument("--delta-max", type=float, default=float(np.pi / 2))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--freeze-node", action="store_true")
    t.add_argument("--no-static", action="store_true",
                   help="drop static constraint families from the loss")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics for a finished run directory")
    e.add_argument("run_dir")
    e.add_argument("--split", default="test")
    e.add_argument("--trajectories", type=int, default=3,
                   help="number of test samples to export trajectories for")
    e.add_argument("--out", default=None)
    e.add_argument("--config", help="JSON file of flag defaults (flags win)")
    e.add_argument("--threads", type=int,
                   default=int(os.environ.get("DYNOPF_THREADS", "1")))
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="integrate one machine at a dispatch")
    s.add_argument("case")
    s.add_argument("--gen", type=int, required=True)
    s.add_argument("--dispatch-file", default=None,
                   help="JSON with p_r, q_r, v_mag, v_ang arrays "
                        "(default: solve the nominal case)")
    s.add_argument("--method", default="dopri5",
                   choices=("euler", "rk4", "bosh3", "dopri5"))
    s.add_argument("--horizon", type=float, default=3.0)
    s.add_argument("--delta-max", type=float, default=float(np.pi / 2))
    common(s)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="timing tables for a finished run")
    b.add_argument("run_dir")
    b.add_argument("--repeats", type=int, default=50)
    b.add_argument("--out", default=None)
    b.add_argument("--config", help="JSON file of flag defaults (flags win)")
    b.add_argument("--threads", type=int,
                   default=int(os.environ.get("DYNOPF_THREADS", "1")))
    b.set_defaults(func=cmd_bench)

    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        args = _apply_config_file(parser, argv, args)
    try:
        args.func(args)
    except SystemExit:
        raise
    except (grid.CaseSyntaxError, grid.CaseSemanticError) as e:
        _fail("case", str(e))
    except FileNotFoundError as e:
        _fail("not_found", str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
