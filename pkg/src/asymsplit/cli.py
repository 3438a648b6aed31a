"""Command-line entry point: ``asymsplit <command> ...``.

Exit status is 0 on success, 2 on bad input (files, shapes, arguments) and 1
on internal errors.  Every report is UTF-8 JSON.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import entropy, planner, privacy, simulator, training
from .arrayio import load_array, save_array
from .datasets import load_dataset
from .model import init_params, load_model
from .spectral import DEFAULT_MAX_ITER, channel_spectrum, decompose_activation, reconstruct


class InputError(Exception):
    pass


def _write_json(path, obj):
    text = json.dumps(obj, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _floats(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def cmd_decompose(a):
    x = load_array(a.input)
    if x.ndim != 3:
        raise InputError(f"decompose needs an N x H x W array, got shape {x.shape}")
    f, xu = decompose_activation(x, a.r, max_iter=a.max_iter)
    save_array(a.out_trusted, reconstruct(f))
    save_array(a.out_untrusted, xu)
    prefix = Path(a.out_factors) if a.out_factors else Path(a.out_trusted).with_suffix("")
    save_array(f"{prefix}.u.npy", f.u)
    save_array(f"{prefix}.v.npy", f.v)
    if a.report:
        _write_json(a.report, {"r": f.rank, "shape": list(f.shape), "svd_macs": f.svd_macs,
                               "max_iter": a.max_iter, "residual_norm": float(np.linalg.norm(xu))})


def cmd_entropy(a):
    x = load_array(a.input)
    if x.ndim == 2:
        if a.kernel is not None:
            raise InputError("--kernel needs an N x H x W array")
        prof = channel_spectrum(x)
    elif x.ndim == 3:
        prof = entropy.profile(x)
    else:
        raise InputError(f"entropy needs a 2-D or 3-D array, got shape {x.shape}")
    report = {
        "mu": prof.entropy,
        "principal_count": prof.principal_count,
        "n_channels": prof.n_channels,
        "singular_values": prof.singular_values.tolist(),
    }
    if a.kernel is not None:
        pr = entropy.patch_entropy_report(x, a.kernel, prof)
        report["patch"] = {"kernel": pr.kernel, "patch_entropies": pr.patch_entropies.tolist(),
                           "principal": pr.principal, "mean": pr.mean, "bound": pr.bound}
    _write_json(a.report, report)


def cmd_plan(a):
    m = load_model(a.model)
    p = planner.plan_r_schedule(m, a.r_cap, a.max_iter)
    d = p.to_dict()
    if a.batch != 1:
        d["layers"] = [c.to_dict() for c in planner.cost_model(m, p, a.batch)]
    d["batch"] = a.batch
    _write_json(a.report, d)


def cmd_run(a):
    m = load_model(a.model)
    plan = planner.plan_r_schedule(m, a.r_cap, a.max_iter)
    params = init_params(m, a.seed)
    x = load_array(a.input)
    out, trace, _ = simulator.run_forward(m, params, plan, x, a.mode, a.concurrent, a.nsr, a.seed)
    _write_json(a.trace, {"mode": a.mode, "ranks": plan.series(), "seed": a.seed,
                          "output": np.asarray(out).tolist(), "trace": trace.to_dict()})
    if a.output:
        save_array(a.output, out)


def cmd_train(a):
    m = load_model(a.model)
    plan = planner.plan_r_schedule(m, a.r_cap, a.max_iter)
    x, labels = load_dataset(a.data)
    res = training.train(m, init_params(m, a.seed), plan, (x, labels), a.epochs, a.lr, a.seed,
                         a.mode, a.batch_size, a.nsr)
    _write_json(a.report, {"mode": a.mode, "epochs": a.epochs, "lr": a.lr, "seed": a.seed,
                           "nsr": a.nsr, **res.to_dict()})


def cmd_privacy(a):
    m = load_model(a.model)
    plan = planner.plan_r_schedule(m, a.r_cap, a.max_iter)
    x, _ = load_dataset(a.data)
    if not m.conv_indices():
        raise InputError("model has no convolution layer")
    layer = m.conv_indices()[0] if a.layer is None else a.layer
    reports = privacy.leakage_sweep(x, m, plan, a.nsr, layer=layer, seed=a.seed,
                                    params=init_params(m, a.seed), r=a.r, bins=a.bins)
    r = plan.rank(layer) if a.r is None else a.r
    _write_json(a.report, {"layer": layer, "r": r, "bins": a.bins,
                           "series": [rep.to_dict() for rep in reports]})


def build_parser():
    ap = argparse.ArgumentParser(prog="asymsplit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def planned(p):
        p.add_argument("--model", required=True, help="model file or bundled model name")
        p.add_argument("--r-cap", type=int, default=planner.DEFAULT_R_CAP)
        p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("decompose", help="split an activation into trusted and untrusted parts")
    p.add_argument("--input", required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--out-trusted", required=True)
    p.add_argument("--out-untrusted", required=True)
    p.add_argument("--out-factors", help="prefix for the .u.npy/.v.npy factor files")
    p.add_argument("--report")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("entropy", help="SVD-channel entropy and patch-entropy bound")
    p.add_argument("--input", required=True)
    p.add_argument("--kernel", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("plan", help="rank schedule and cost report")
    p.add_argument("--model", required=True)
    p.add_argument("--r-cap", type=int, default=planner.DEFAULT_R_CAP)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="forward pass with an execution trace")
    planned(p)
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=simulator.MODES, default="decomposed")
    p.add_argument("--nsr", type=float, default=0.0)
    p.add_argument("--concurrent", action="store_true")
    p.add_argument("--trace", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="SGD training on a dataset directory")
    planned(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--mode", choices=simulator.MODES, default="decomposed")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--nsr", type=float, default=0.0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("privacy", help="leakage of the untrusted residual per noise level")
    planned(p)
    p.add_argument("--data", required=True)
    p.add_argument("--nsr", type=_floats, default=[0.0, 0.05, 0.1, 0.2])
    p.add_argument("--layer", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--bins", type=int, default=privacy.DEFAULT_BINS)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_privacy)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InputError, ValueError, OSError) as exc:
        print(f"asymsplit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"asymsplit {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
