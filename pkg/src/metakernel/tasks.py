"""Few-shot task generators, label transforms and task-file I/O.

Random streams
--------------
All sampling uses the counter-based Philox generator. Each draw comes from
its own stream keyed by ``(seed, task_index, role)``::

    np.random.Philox(np.random.SeedSequence(seed, spawn_key=(task_index, role)))

with roles

    0  task parameters (alpha, piecewise levels and breakpoints)
    1  query inputs
    2  support inputs
    3  query label noise
    4  support label noise

and the sample index being the position within that stream. Growing ``N``
therefore leaves earlier tasks untouched, and growing ``n`` only appends
query samples.
"""

import json
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import sym_eig

ROLE_PARAMS, ROLE_QUERY, ROLE_SUPPORT, ROLE_QUERY_NOISE, ROLE_SUPPORT_NOISE = range(5)
KINDS = ("quadratic", "piecewise")


def stream(seed, task_index, role):
    """Independent generator for one (task, role) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(task_index), int(role)))
    return np.random.Generator(np.random.Philox(ss))


def _matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class TaskData:
    """One few-shot task: query set ``(X, Y)`` and support set ``(X_sup, Y_sup)``.

    1-d inputs are promoted to column matrices, so ``X`` is ``(n, d)``,
    ``Y`` is ``(n, k)``, ``X_sup`` is ``(m, d)`` and ``Y_sup`` is ``(m, k)``.
    """

    X: np.ndarray
    Y: np.ndarray
    X_sup: np.ndarray
    Y_sup: np.ndarray
    alpha: Optional[float] = None

    def __post_init__(self):
        for name in ("X", "Y", "X_sup", "Y_sup"):
            object.__setattr__(self, name, _matrix(getattr(self, name), name))
        X, Y, Xs, Ys = self.X, self.Y, self.X_sup, self.Y_sup
        if X.shape[0] < 1 or Xs.shape[0] < 1:
            raise ShapeError("a task needs at least one query and one support sample")
        if Y.shape[0] != X.shape[0] or Ys.shape[0] != Xs.shape[0]:
            raise ShapeError("samples and labels must have the same number of rows")
        if X.shape[1] != Xs.shape[1]:
            raise ShapeError(f"query/support feature dims differ: {X.shape[1]} vs {Xs.shape[1]}")
        if Y.shape[1] != Ys.shape[1]:
            raise ShapeError(f"query/support label dims differ: {Y.shape[1]} vs {Ys.shape[1]}")
        for name in ("X", "Y", "X_sup", "Y_sup"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"task field {name} has non-finite entries")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X_sup.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def k(self):
        return self.Y.shape[1]

    def with_labels(self, Y, Y_sup):
        return replace(self, Y=Y, Y_sup=Y_sup)


def check_consistent(tasks, what="tasks"):
    """Return ``(n, m, d, k)`` shared by all tasks or raise :class:`ShapeError`."""
    tasks = list(tasks)
    if not tasks:
        raise ValidationError(f"{what}: empty task list")
    dims = {(t.n, t.m, t.d, t.k) for t in tasks}
    if len(dims) != 1:
        raise ShapeError(f"{what}: inconsistent (n, m, d, k) across tasks: {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True, eq=False)
class TaskBatch:
    """A list of tasks sharing ``(n, m, d, k)`` together with how they were made."""

    tasks: List[TaskData]
    seed: int = 0
    kind: str = "quadratic"
    noise_xi: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tasks", list(self.tasks))
        check_consistent(self.tasks, "TaskBatch")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    @property
    def shape(self):
        """``(N, n, m, d, k)``."""
        t = self.tasks[0]
        return (len(self.tasks), t.n, t.m, t.d, t.k)


def _check_counts(N, n, m):
    for name, v in (("N", N), ("n", n), ("m", m)):
        if int(v) != v or v < 1:
            raise ValidationError(f"{name} must be a positive integer, got {v}")


def gen_quadratic_tasks(N=40, n=8, m=2, seed=0) -> TaskBatch:
    """Tasks ``y = alpha * x^2`` with ``alpha, x ~ Unif(0, 1)``.

    Defaults follow the synthetic benchmark: 40 tasks, 8 query and 2
    support samples per task.
    """
    _check_counts(N, n, m)
    tasks = []
    for i in range(N):
        alpha = float(stream(seed, i, ROLE_PARAMS).uniform())
        X = stream(seed, i, ROLE_QUERY).uniform(size=(n, 1))
        Xs = stream(seed, i, ROLE_SUPPORT).uniform(size=(m, 1))
        tasks.append(TaskData(X, alpha * X**2, Xs, alpha * Xs**2, alpha=alpha))
    return TaskBatch(tasks, seed=seed, kind="quadratic")


def piecewise_function(levels, breaks):
    """Piecewise-constant function on [0, 1] with sorted interior `breaks`."""
    levels = np.asarray(levels, dtype=np.float64)
    breaks = np.asarray(breaks, dtype=np.float64)

    def f(x):
        return levels[np.searchsorted(breaks, x, side="right")]

    return f


def gen_piecewise_tasks(N=40, n=8, m=2, pieces=5, seed=0) -> TaskBatch:
    """Tasks whose target is an independent random step function on [0, 1].

    Each task draws `pieces` levels from ``Unif(0, 1)`` and ``pieces - 1``
    sorted breakpoints from ``Unif(0, 1)``; inputs are sampled as in
    :func:`gen_quadratic_tasks`.
    """
    _check_counts(N, n, m)
    if int(pieces) != pieces or pieces < 2:
        raise ValidationError(f"pieces must be an integer >= 2, got {pieces}")
    tasks = []
    for i in range(N):
        g = stream(seed, i, ROLE_PARAMS)
        levels = g.uniform(size=pieces)
        breaks = np.sort(g.uniform(size=pieces - 1))
        f = piecewise_function(levels, breaks)
        X = stream(seed, i, ROLE_QUERY).uniform(size=(n, 1))
        Xs = stream(seed, i, ROLE_SUPPORT).uniform(size=(m, 1))
        tasks.append(TaskData(X, f(X), Xs, f(Xs)))
    return TaskBatch(tasks, seed=seed, kind="piecewise", extra={"pieces": int(pieces)})


def add_label_noise(batch: TaskBatch, xi, seed) -> TaskBatch:
    """Add i.i.d. ``N(0, xi^2)`` noise to every query and support label.

    Returns a new batch; inputs are shared, labels are fresh arrays.
    """
    if not xi >= 0:
        raise ValidationError(f"noise level must be nonnegative, got {xi}")
    if xi == 0:
        return replace(batch, tasks=[t.with_labels(t.Y.copy(), t.Y_sup.copy()) for t in batch])
    tasks = []
    for i, t in enumerate(batch):
        eq = stream(seed, i, ROLE_QUERY_NOISE).normal(scale=xi, size=t.Y.shape)
        es = stream(seed, i, ROLE_SUPPORT_NOISE).normal(scale=xi, size=t.Y_sup.shape)
        tasks.append(t.with_labels(t.Y + eq, t.Y_sup + es))
    # independent noise layers add in variance
    return replace(batch, tasks=tasks, noise_xi=float(np.hypot(batch.noise_xi, xi)))


def centroid_label_encode(features, class_ids):
    """Replace each sample's class by the mean feature vector of that class.

    Parameters
    ----------
    features : (s, h) array_like
    class_ids : (s,) integer array_like

    Returns
    -------
    (s, h) ndarray
    """
    F = _matrix(features, "features")
    c = np.asarray(class_ids)
    if c.ndim != 1 or c.shape[0] != F.shape[0]:
        raise ShapeError(f"class_ids must have one entry per feature row ({F.shape[0]})")
    if F.shape[0] == 0:
        raise ValidationError("cannot encode an empty class set")
    classes, inv = np.unique(c, return_inverse=True)
    sums = np.zeros((classes.size, F.shape[1]))
    np.add.at(sums, inv, F)
    counts = np.bincount(inv, minlength=classes.size)
    return (sums / counts[:, None])[inv]


def pca_directions(features, h):
    """Top-`h` principal directions (columns) of the feature covariance."""
    F = _matrix(features, "features")
    if not 1 <= h <= F.shape[1]:
        raise ValidationError(f"h must be in [1, {F.shape[1]}], got {h}")
    C = np.cov(F, rowvar=False).reshape(F.shape[1], F.shape[1])
    eig = sym_eig(C)
    return eig.eigenvectors[:, ::-1][:, :h]


# -- task files -------------------------------------------------------------


def save_tasks(batch: TaskBatch, path):
    """Write a batch as line-delimited JSON: one header line, then one line per task."""
    N, n, m, d, k = batch.shape
    header = {"kind": batch.kind, "N": N, "n": n, "m": m, "d": d, "k": k,
              "seed": int(batch.seed), "noise_xi": float(batch.noise_xi)}
    header.update(batch.extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in batch:
            rec = {"alpha": t.alpha, "X": t.X.tolist(), "Y": t.Y.tolist(),
                   "X_sup": t.X_sup.tolist(), "Y_sup": t.Y_sup.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_tasks(path) -> TaskBatch:
    """Read a task file written by :func:`save_tasks`."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty task file")
    try:
        header = json.loads(lines[0])
        recs = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from exc
    tasks = [TaskData(r["X"], r["Y"], r["X_sup"], r["Y_sup"], alpha=r.get("alpha")) for r in recs]
    if header.get("N", len(tasks)) != len(tasks):
        raise ValidationError(f"{path}: header says N={header['N']} but file has {len(tasks)} tasks")
    known = {"kind", "N", "n", "m", "d", "k", "seed", "noise_xi"}
    extra = {key: v for key, v in header.items() if key not in known}
    return TaskBatch(tasks, seed=header.get("seed", 0), kind=header.get("kind", "quadratic"),
                     noise_xi=header.get("noise_xi", 0.0), extra=extra)
