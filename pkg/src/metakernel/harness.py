"""Experiment pipelines: noise sweep, width sweep, MAML-vs-kernel comparison
and the functional-gradient decomposition demo.

Every pipeline is a deterministic function of its :class:`ExperimentConfig`.
Results go to a CSV table plus a JSON sidecar (``<output>.json``) holding the
effective config, its SHA-256 hash, the package version and timestamps; the
CSV itself carries no timestamps, so reruns are byte-identical.

Seeding
-------
For seed ``s`` a cell draws

* training tasks from task seed ``s``,
* held-out test tasks from task seed ``s + TEST_SEED_OFFSET``,
* label noise from ``s + NOISE_SEED_OFFSET`` (train) and
  ``s + TEST_SEED_OFFSET + NOISE_SEED_OFFSET`` (test),
* network initialization from ``s``.
"""

import csv
import dataclasses
import datetime
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import finite_width as fw
from .errors import MetaKernelError, ResourceError, ValidationError
from .linalg import sym_eig
from .mnk import MetaKernelConfig, assemble_mnk
from .ntk import NetConfig
from .regression import bound_from_model, expected_loss, fit_meta
from .tasks import TaskData, add_label_noise, gen_piecewise_tasks, gen_quadratic_tasks

EXPERIMENTS = ("noise_sweep", "width_sweep", "compare", "decompose")
TEST_SEED_OFFSET = 100_003
NOISE_SEED_OFFSET = 500_009

# Experiment-scale defaults: a 2-layer net (one hidden layer). The inner rate
# keeps lambda * theta_max near 1.4 on quadratic supports, below the
# discrete-step stability limit of 2.
DEFAULT_NET = NetConfig(depth_L=1, sigma_w_sq=2.0, sigma_b_sq=2.0)
DEFAULT_KERNEL = MetaKernelConfig(net=DEFAULT_NET, lambda_inner=0.088, tau=10, eta_outer=0.05,
                                  t_outer=math.inf, mode="discrete")


def _default_task_args():
    return {"kind": "quadratic", "N": 40, "n": 8, "m": 2, "pieces": 5, "n_test": 40}


_DEFAULT_SWEEPS = {
    "noise_sweep": [0.0, 0.05, 0.1, 0.2, 0.4],
    "width_sweep": [64, 256, 1024],
    "compare": [512],
    "decompose": [0.5],
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one pipeline run.

    Attributes
    ----------
    experiment : str
        One of ``noise_sweep``, ``width_sweep``, ``compare``, ``decompose``.
    kernel : MetaKernelConfig
        Width-normalized rates; ``eta_outer`` is replaced per cell when
        `eta_scale` is set.
    tasks : dict
        ``kind`` (quadratic or piecewise), ``N``, ``n``, ``m``, ``pieces`` and
        ``n_test`` (held-out tasks per cell).
    sweep_values : list
        Noise levels, widths, widths, or test-task alphas depending on
        `experiment`.
    seeds : list of int
    output_path : str or None
    width : int
        Network width where the sweep variable is not the width.
    steps : int
        Outer gradient steps of MAML training.
    eta_scale : float or None
        If set, the outer rate is ``eta_scale / lambda_max(Phi)`` of the
        training tasks' analytic kernel.
    center : bool
        Train the centered network ``f - f_0`` so that the initial function
        is zero, as assumed by the kernel limit.
    kernel_checkpoints : int
        Kernel-drift checkpoints during width-sweep training.
    grid_size : int
        Grid points for the decomposition table.
    """

    experiment: str = "noise_sweep"
    kernel: MetaKernelConfig = DEFAULT_KERNEL
    tasks: dict = field(default_factory=_default_task_args)
    sweep_values: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_path: Optional[str] = None
    width: int = 512
    steps: int = 2000
    eta_scale: Optional[float] = 1.8
    center: bool = True
    kernel_checkpoints: int = 4
    grid_size: int = 200

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.sweep_values:
            object.__setattr__(self, "sweep_values", list(_DEFAULT_SWEEPS[self.experiment]))
        object.__setattr__(self, "tasks", {**_default_task_args(), **self.tasks})
        if not self.seeds:
            raise ValidationError("seeds must be nonempty")
        if self.tasks["kind"] not in ("quadratic", "piecewise"):
            raise ValidationError(f"unknown task kind {self.tasks['kind']!r}")
        for key in ("N", "n", "m", "n_test"):
            v = self.tasks[key]
            if int(v) != v or v < 1:
                raise ValidationError(f"tasks.{key} must be a positive integer, got {v}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValidationError(f"steps must be a nonnegative integer, got {self.steps}")
        if int(self.width) != self.width or self.width < 1:
            raise ValidationError(f"width must be a positive integer, got {self.width}")
        if self.eta_scale is not None and not 0 < self.eta_scale < 2:
            raise ValidationError(f"eta_scale must lie in (0, 2), got {self.eta_scale}")
        if self.grid_size < 2:
            raise ValidationError("grid_size must be at least 2")

    def to_dict(self):
        k = self.kernel
        return {
            "experiment": self.experiment,
            "kernel": {**dataclasses.asdict(k.net), "lambda_inner": k.lambda_inner, "tau": k.tau,
                       "eta_outer": k.eta_outer, "t_outer": k.t_outer, "ridge": k.ridge,
                       "inner_ridge": k.inner_ridge, "mode": k.mode},
            "tasks": dict(self.tasks),
            "sweep_values": list(self.sweep_values),
            "seeds": list(self.seeds),
            "output_path": self.output_path,
            "width": self.width,
            "steps": self.steps,
            "eta_scale": self.eta_scale,
            "center": self.center,
            "kernel_checkpoints": self.kernel_checkpoints,
            "grid_size": self.grid_size,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "kernel" in d and not isinstance(d["kernel"], MetaKernelConfig):
            d["kernel"] = kernel_from_dict(d["kernel"])
        return cls(**d)

    def config_hash(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def _num(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    return v


def kernel_from_dict(d, base: MetaKernelConfig = DEFAULT_KERNEL):
    """Build a :class:`MetaKernelConfig` from a flat mapping over `base`."""
    d = {key: _num(v) for key, v in (d or {}).items()}
    net_keys = {f.name for f in dataclasses.fields(NetConfig)}
    kern_keys = {f.name for f in dataclasses.fields(MetaKernelConfig)} - {"net"}
    unknown = set(d) - net_keys - kern_keys
    if unknown:
        raise ValidationError(f"unknown kernel keys: {sorted(unknown)}")
    net = dataclasses.replace(base.net, **{key: d[key] for key in net_keys & set(d)})
    return dataclasses.replace(base, net=net, **{key: d[key] for key in kern_keys & set(d)})


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {str(key): _jsonable(v) for key, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentResult:
    """Table of result rows plus provenance."""

    rows: List[Dict]
    columns: List[str]
    provenance: Dict

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def write(self, path):
        """Write ``path`` (CSV) and ``path + '.json'`` (provenance)."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.provenance), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _provenance(cfg: ExperimentConfig, started, elapsed):
    from . import __version__

    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "started_utc": started,
        "elapsed_s": round(elapsed, 3),
    }


def _utcnow():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _run_cells(cfg, columns, cell):
    started, t0 = _utcnow(), time.perf_counter()
    rows = []
    for v in cfg.sweep_values:
        for s in cfg.seeds:
            row = {"sweep_value": v, "seed": s, "error": ""}
            try:
                row.update(cell(v, s))
            except MetaKernelError as exc:
                row["error"] = f"{type(exc).__name__} at (sweep_value={v}, seed={s}): {exc}"
            rows.append(row)
    result = ExperimentResult(rows, columns, _provenance(cfg, started, time.perf_counter() - t0))
    if cfg.output_path:
        result.write(cfg.output_path)
    return result


# -- shared helpers ---------------------------------------------------------


def make_tasks(cfg: ExperimentConfig, seed, N=None, test=False):
    """Generate the (noise-free) training or test tasks of one cell."""
    t = cfg.tasks
    N = t["n_test"] if test and N is None else (t["N"] if N is None else N)
    s = seed + (TEST_SEED_OFFSET if test else 0)
    if t["kind"] == "piecewise":
        return gen_piecewise_tasks(N, t["n"], t["m"], pieces=t["pieces"], seed=s)
    return gen_quadratic_tasks(N, t["n"], t["m"], seed=s)


def outer_rate(cfg: ExperimentConfig, kcfg: MetaKernelConfig, train_tasks):
    """Width-normalized outer rate: fixed or ``eta_scale / lambda_max(Phi)``."""
    if cfg.eta_scale is None:
        return kcfg.eta_outer
    phi = assemble_mnk(train_tasks, train_tasks, kcfg).scalar
    return cfg.eta_scale / float(sym_eig(phi).eigenvalues[-1])


def _init(cfg: ExperimentConfig, kcfg, width, seed, d=1, k=1):
    p = fw.init_params(kcfg.net, width, d, k, seed)
    return p.center() if cfg.center else p


def _inner_steps(kcfg):
    if math.isinf(kcfg.tau):
        raise ValidationError("finite-width training needs a finite tau")
    return int(kcfg.tau)


def train_maml(cfg: ExperimentConfig, kcfg, train_tasks, width, seed, eta0, checkpoints=0):
    params = _init(cfg, kcfg, width, seed)
    return fw.maml_train_gd(params, train_tasks, eta0 / width, kcfg.lambda_inner / width,
                            _inner_steps(kcfg), cfg.steps, kernel_checkpoints=checkpoints)


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


# -- pipelines --------------------------------------------------------------

NOISE_COLUMNS = ["sweep_value", "seed", "bound", "normalized_bound", "kernel_test_loss",
                 "maml_test_loss", "maml_train_loss", "min_eig_phi", "eta_outer", "error"]


def run_noise_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Bound, kernel test loss and trained-MAML test loss versus label noise."""
    if cfg.experiment != "noise_sweep":
        raise ValidationError("run_noise_sweep needs experiment == 'noise_sweep'")
    kcfg = cfg.kernel

    def cell(xi, seed):
        train = add_label_noise(make_tasks(cfg, seed), xi, seed + NOISE_SEED_OFFSET).tasks
        test = add_label_noise(make_tasks(cfg, seed, test=True), xi,
                               seed + TEST_SEED_OFFSET + NOISE_SEED_OFFSET).tasks
        model = fit_meta(train, kcfg)
        rep = bound_from_model(model, normalize=True)
        kernel_loss = expected_loss([model.predict(t).values for t in test], test)
        eta0 = cfg.eta_scale / float(model.eig.eigenvalues[-1]) if cfg.eta_scale else kcfg.eta_outer
        params, trace = train_maml(cfg, kcfg, train, cfg.width, seed, eta0)
        lam = kcfg.lambda_inner / cfg.width
        preds = fw.meta_outputs(params, test, lam, _inner_steps(kcfg))
        return {"bound": rep.bound, "normalized_bound": rep.normalized_bound,
                "kernel_test_loss": kernel_loss, "maml_test_loss": expected_loss(preds, test),
                "maml_train_loss": float(trace.losses[-1]), "min_eig_phi": rep.min_eig_phi,
                "eta_outer": eta0}

    return _run_cells(cfg, NOISE_COLUMNS, cell)


WIDTH_COLUMNS = ["sweep_value", "seed", "kernel_rel_error", "final_loss", "param_drift",
                 "kernel_drift", "eta_outer", "error"]


def run_width_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Empirical-vs-analytic kernel error and training drifts versus width.

    The training tasks (from ``seeds[0]``) are shared by all cells; the seed
    only changes the network initialization.
    """
    if cfg.experiment != "width_sweep":
        raise ValidationError("run_width_sweep needs experiment == 'width_sweep'")
    for w in cfg.sweep_values:
        if int(w) != w or w < 1:
            raise ValidationError(f"widths must be positive integers, got {w}")
        if w > fw.MAX_KERNEL_WIDTH:
            raise ResourceError(f"width {w} exceeds the kernel cap {fw.MAX_KERNEL_WIDTH}")
    kcfg = cfg.kernel
    tau = _inner_steps(kcfg)
    tasks = make_tasks(cfg, cfg.seeds[0]).tasks
    phi = assemble_mnk(tasks, tasks, kcfg).phi
    eta0 = outer_rate(cfg, kcfg, tasks)

    def cell(width, seed):
        width = int(width)
        p0 = _init(cfg, kcfg, width, seed)
        emp = fw.empirical_meta_kernel(p0, tasks, kcfg.lambda_inner / width, tau).phi
        row = {"kernel_rel_error": float(np.linalg.norm(emp - phi) / np.linalg.norm(phi)),
               "eta_outer": eta0}
        if cfg.steps > 0:
            _, trace = train_maml(cfg, kcfg, tasks, width, seed, eta0,
                                  checkpoints=cfg.kernel_checkpoints)
            row.update(final_loss=float(trace.losses[-1]),
                       param_drift=float(trace.param_drift[-1]),
                       kernel_drift=(float(np.max(trace.kernel_drift))
                                     if trace.kernel_drift is not None else None))
        return row

    return _run_cells(cfg, WIDTH_COLUMNS, cell)


PREDICTORS = ("maml", "linearized", "mnk", "zero")
COMPARE_COLUMNS = (["sweep_value", "seed"]
                   + [f"rmse_{a}_{b}" for a in PREDICTORS for b in PREDICTORS]
                   + ["rel_rmse_maml_mnk", "rel_rmse_maml_linearized", "eta_outer", "error"])


def run_compare(cfg: ExperimentConfig) -> ExperimentResult:
    """Trained MAML vs its linearization vs the analytic MNK on held-out tasks.

    The sweep variable is the network width. The MNK and linearized
    predictors use the same outer time as training (``t = steps`` in the
    kernel's time mode); relative RMSEs divide by the RMS of the MAML
    predictions, which is also the RMSE against the zero predictor.
    """
    if cfg.experiment != "compare":
        raise ValidationError("run_compare needs experiment == 'compare'")
    base = cfg.kernel

    def cell(width, seed):
        width = int(width)
        train = make_tasks(cfg, seed).tasks
        test = make_tasks(cfg, seed, test=True).tasks
        eta0 = outer_rate(cfg, base, train)
        kcfg = dataclasses.replace(base, eta_outer=eta0, t_outer=cfg.steps)
        params, _ = train_maml(cfg, kcfg, train, width, seed, eta0)
        p0 = _init(cfg, kcfg, width, seed)
        tau = _inner_steps(kcfg)
        model = fit_meta(train, kcfg)
        preds = {
            "maml": np.concatenate([fw.meta_output(params, t, kcfg.lambda_inner / width, tau)
                                    for t in test]),
            "linearized": np.concatenate(fw.analytic_meta_outputs(p0, test, train, kcfg)),
            "mnk": np.concatenate([model.predict(t).values for t in test]),
        }
        preds["zero"] = np.zeros_like(preds["maml"])
        row = {f"rmse_{a}_{b}": _rmse(preds[a], preds[b]) for a in PREDICTORS for b in PREDICTORS}
        scale = row["rmse_maml_zero"]
        row["rel_rmse_maml_mnk"] = row["rmse_maml_mnk"] / scale if scale > 0 else math.nan
        row["rel_rmse_maml_linearized"] = (row["rmse_maml_linearized"] / scale
                                           if scale > 0 else math.nan)
        row["eta_outer"] = eta0
        return row

    return _run_cells(cfg, COMPARE_COLUMNS, cell)


DECOMPOSE_COLUMNS = ["x", "truth", "base", "meta", "pfg"]


def run_decompose(cfg: ExperimentConfig) -> ExperimentResult:
    """Base learner, meta learner and PFG on a dense grid for one test task.

    Uses ``sweep_values[0]`` as the test task's alpha and ``seeds[0]`` for
    the training tasks and the test support set.
    """
    if cfg.experiment != "decompose":
        raise ValidationError("run_decompose needs experiment == 'decompose'")
    started, t0 = _utcnow(), time.perf_counter()
    alpha, seed = float(cfg.sweep_values[0]), cfg.seeds[0]
    train = make_tasks(cfg, seed).tasks
    probe = make_tasks(cfg, seed, N=1, test=True).tasks[0]
    grid = np.linspace(0.0, 1.0, cfg.grid_size)[:, None]
    task = TaskData(grid, alpha * grid**2, probe.X_sup, alpha * probe.X_sup**2, alpha=alpha)
    pred = fit_meta(train, cfg.kernel).predict(task)
    rows = [{"x": float(x), "truth": float(alpha * x * x), "base": float(b), "meta": float(m),
             "pfg": float(p)}
            for x, b, m, p in zip(grid[:, 0], pred.base_learner[:, 0], pred.values[:, 0],
                                  pred.pfg[:, 0])]
    result = ExperimentResult(rows, DECOMPOSE_COLUMNS,
                              _provenance(cfg, started, time.perf_counter() - t0))
    if cfg.output_path:
        result.write(cfg.output_path)
    return result


RUNNERS = {"noise_sweep": run_noise_sweep, "width_sweep": run_width_sweep,
           "compare": run_compare, "decompose": run_decompose}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg)


def seed_median(result: ExperimentResult, column):
    """``{sweep_value: median over seeds}`` ignoring error rows."""
    out = {}
    for v in dict.fromkeys(r["sweep_value"] for r in result.rows):
        vals = [r[column] for r in result.rows
                if r["sweep_value"] == v and not r["error"] and r.get(column) is not None]
        out[v] = float(np.median(vals)) if vals else math.nan
    return out


def load_config(path):
    """Read a JSON or YAML config file into a plain dict."""
    import yaml

    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"{path}: cannot parse config ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    return data
