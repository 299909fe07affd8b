"""Command-line entry point (``metakernel``).

Exit codes: 0 success, 2 config or validation error, 3 numeric or
singularity error, 4 resource cap exceeded.

Config precedence is flags > config file (JSON or YAML) > built-in defaults.
"""

import argparse
import json
import math
import sys

import numpy as np

from . import finite_width as fw
from . import harness
from .errors import MetaKernelError, ValidationError
from .mnk import assemble_mnk
from .ntk import ntk_matrix
from .regression import fit_meta, generalization_bound
from .tasks import add_label_noise, gen_piecewise_tasks, gen_quadratic_tasks, load_tasks, save_tasks

KERNEL_FLAGS = {
    # flag: (config key, type)
    "depth": ("depth_L", int),
    "sigma_w_sq": ("sigma_w_sq", float),
    "sigma_b_sq": ("sigma_b_sq", float),
    "lam": ("lambda_inner", float),
    "tau": ("tau", float),
    "eta": ("eta_outer", float),
    "t_outer": ("t_outer", float),
    "ridge": ("ridge", float),
    "inner_ridge": ("inner_ridge", float),
    "mode": ("mode", str),
}


def _add_kernel_flags(p):
    g = p.add_argument_group("kernel")
    g.add_argument("--depth", type=int, help="hidden layers L")
    g.add_argument("--sigma-w-sq", dest="sigma_w_sq", type=float)
    g.add_argument("--sigma-b-sq", dest="sigma_b_sq", type=float)
    g.add_argument("--lambda", dest="lam", type=float, help="inner rate (width-normalized)")
    g.add_argument("--tau", type=float, help="inner steps or time; 'inf' allowed")
    g.add_argument("--eta", type=float, help="outer rate (width-normalized)")
    g.add_argument("--t-outer", dest="t_outer", type=float, help="outer time; 'inf' allowed")
    g.add_argument("--ridge", type=float)
    g.add_argument("--inner-ridge", dest="inner_ridge", type=float)
    g.add_argument("--mode", choices=("continuous", "discrete"))
    p.add_argument("--config", help="JSON or YAML config file")


def _file_config(args):
    return harness.load_config(args.config) if getattr(args, "config", None) else {}


def _kernel_cfg(args, file_cfg):
    d = dict(file_cfg.get("kernel", {}))
    for flag, (key, _) in KERNEL_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    return harness.kernel_from_dict(d)


def _tasks(path):
    return load_tasks(path).tasks


def _write_matrix(M, path):
    M = np.atleast_2d(M)
    if path:
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
    else:
        np.savetxt(sys.stdout, M, delimiter=",", fmt="%.17g")


def _emit_json(obj, path):
    text = json.dumps(harness._jsonable(obj), indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _read_inputs(path):
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    return X


# -- commands ---------------------------------------------------------------


def cmd_gen_tasks(args):
    if args.kind == "piecewise":
        batch = gen_piecewise_tasks(args.N, args.n, args.m, pieces=args.pieces, seed=args.seed)
    else:
        batch = gen_quadratic_tasks(args.N, args.n, args.m, seed=args.seed)
    if args.noise:
        noise_seed = args.noise_seed if args.noise_seed is not None else args.seed + harness.NOISE_SEED_OFFSET
        batch = add_label_noise(batch, args.noise, noise_seed)
    save_tasks(batch, args.out)


def cmd_ntk(args):
    cfg = _kernel_cfg(args, _file_config(args))
    X = _read_inputs(args.inputs)
    Z = _read_inputs(args.inputs2) if args.inputs2 else X
    res = ntk_matrix(X, Z, cfg.net)
    _write_matrix(res.nngp if args.nngp else res.theta, args.out)


def cmd_mnk(args):
    cfg = _kernel_cfg(args, _file_config(args))
    rows = _tasks(args.tasks)
    cols = _tasks(args.col_tasks) if args.col_tasks else rows
    _write_matrix(assemble_mnk(rows, cols, cfg).phi, args.out)


def cmd_predict(args):
    cfg = _kernel_cfg(args, _file_config(args))
    model = fit_meta(_tasks(args.train), cfg)
    lines = []
    for ti, task in enumerate(_tasks(args.test)):
        pred = model.predict(task)
        for q in range(task.n):
            for o in range(task.k):
                lines.append([ti, q, o, *task.X[q], task.Y[q, o], pred.base_learner[q, o],
                              pred.values[q, o], pred.pfg[q, o]])
    d = len(lines[0]) - 7 if lines else 0
    header = ["task", "query", "output"] + [f"x{j}" for j in range(d)] + ["y", "base", "meta", "pfg"]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write(",".join(header) + "\n")
        for ln in lines:
            out.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                               for v in ln) + "\n")
    finally:
        if args.out:
            out.close()


def cmd_bound(args):
    cfg = _kernel_cfg(args, _file_config(args))
    rep = generalization_bound(_tasks(args.train), cfg, normalize=True)
    _emit_json({"bound": rep.bound, "normalized_bound": rep.normalized_bound,
                "min_eig_phi": rep.min_eig_phi, "quad_form": rep.quad_form,
                "depth_L": rep.depth_L, "n_tasks": rep.n_tasks, "n_query": rep.n_query}, args.out)


def cmd_maml_train(args):
    file_cfg = _file_config(args)
    cfg = _kernel_cfg(args, file_cfg)
    tasks = _tasks(args.tasks)
    if math.isinf(cfg.tau):
        raise ValidationError("maml-train needs a finite --tau")
    d, k = tasks[0].d, tasks[0].k
    if args.init:
        params = fw.load_params(args.init)
    else:
        params = fw.init_params(cfg.net, args.width, d, k, args.seed)
        if args.center:
            params = params.center()
    width = params.width
    params, trace = fw.maml_train_gd(params, tasks, cfg.eta_outer / width,
                                     cfg.lambda_inner / width, int(cfg.tau), args.steps)
    if args.out:
        fw.save_params(params, args.out)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("step,loss,param_drift\n")
            for s, (loss, drift) in enumerate(zip(trace.losses, trace.param_drift)):
                fh.write(f"{s},{float(loss)!r},{float(drift)!r}\n")
    print(json.dumps({"final_loss": float(trace.losses[-1]),
                      "param_drift": float(trace.param_drift[-1]), "steps": args.steps}))


def _experiment_cfg(args, name):
    d = _file_config(args)
    if d.get("experiment", name) != name:
        raise ValidationError(f"config file is for {d['experiment']!r}, not {name!r}")
    d["experiment"] = name
    d["kernel"] = _kernel_cfg(args, d)
    overrides = {"sweep_values": args.sweep_values, "seeds": args.seeds, "width": args.width,
                 "steps": args.steps, "output_path": args.output, "eta_scale": args.eta_scale}
    d.update({key: v for key, v in overrides.items() if v is not None})
    if args.center is not None:
        d["center"] = args.center
    return harness.ExperimentConfig.from_dict(d)


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_experiment(args):
    name = args.command.replace("-", "_")
    cfg = _experiment_cfg(args, name)
    result = harness.run_experiment(cfg)
    if not cfg.output_path:
        sys.stdout.write(result.to_csv())
    failed = sum(1 for r in result.rows if r.get("error"))
    if failed:
        print(f"{failed} cell(s) failed; see the error column", file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="metakernel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tasks", help="generate a task file")
    g.add_argument("--kind", choices=("quadratic", "piecewise"), default="quadratic")
    g.add_argument("--N", type=int, default=40)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--m", type=int, default=2)
    g.add_argument("--pieces", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0, help="label noise std xi")
    g.add_argument("--noise-seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_tasks)

    g = sub.add_parser("ntk", help="analytic NTK between sample files (CSV rows)")
    g.add_argument("--inputs", required=True)
    g.add_argument("--inputs2")
    g.add_argument("--nngp", action="store_true", help="write the NNGP covariance instead")
    g.add_argument("--out")
    _add_kernel_flags(g)
    g.set_defaults(func=cmd_ntk)

    g = sub.add_parser("mnk", help="assemble the meta kernel over task files")
    g.add_argument("--tasks", required=True)
    g.add_argument("--col-tasks")
    g.add_argument("--out")
    _add_kernel_flags(g)
    g.set_defaults(func=cmd_mnk)

    g = sub.add_parser("predict", help="kernel meta-predictions on test tasks")
    g.add_argument("--train", required=True)
    g.add_argument("--test", required=True)
    g.add_argument("--out")
    _add_kernel_flags(g)
    g.set_defaults(func=cmd_predict)

    g = sub.add_parser("bound", help="generalization bound of a training task file")
    g.add_argument("--train", required=True)
    g.add_argument("--out")
    _add_kernel_flags(g)
    g.set_defaults(func=cmd_bound)

    g = sub.add_parser("maml-train", help="train a finite-width network with MAML")
    g.add_argument("--tasks", required=True)
    g.add_argument("--width", type=int, default=512)
    g.add_argument("--steps", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--center", action="store_true", help="start from the zero function")
    g.add_argument("--init", help="resume from a checkpoint")
    g.add_argument("--out", help="checkpoint path")
    g.add_argument("--trace", help="CSV path for the loss trace")
    _add_kernel_flags(g)
    g.set_defaults(func=cmd_maml_train)

    for name, conv in (("noise-sweep", _csv_floats), ("width-sweep", _csv_ints),
                       ("compare", _csv_ints), ("decompose", _csv_floats)):
        g = sub.add_parser(name, help=f"run the {name} pipeline")
        g.add_argument("--sweep-values", type=conv, help="comma-separated values")
        g.add_argument("--seeds", type=_csv_ints, help="comma-separated seeds")
        g.add_argument("--width", type=int)
        g.add_argument("--steps", type=int)
        g.add_argument("--eta-scale", dest="eta_scale", type=float)
        g.add_argument("--center", dest="center", action="store_true", default=None)
        g.add_argument("--no-center", dest="center", action="store_false")
        g.add_argument("--output", help="CSV path (a .json sidecar is written next to it)")
        _add_kernel_flags(g)
        g.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        args.func(args)
    except MetaKernelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except MemoryError:
        print("error: out of memory", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
