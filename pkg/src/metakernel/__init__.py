"""MAML and its infinite-width kernel counterpart, the Meta Neural Kernel.

Set ``METAKERNEL_NUM_THREADS`` before import to cap BLAS/XLA threads.
"""

import os

_threads = os.environ.get("METAKERNEL_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
    os.environ.setdefault(
        "XLA_FLAGS", f"--xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads={_threads}")

from .errors import (  # noqa: E402
    DivergenceError, MetaKernelError, NumericError, PSDViolationError, ResourceError,
    ShapeError, SingularMatrixError, ValidationError,
)
from .linalg import EigenPair, matrix_func, psd_solve, sym_eig  # noqa: E402
from .mnk import (  # noqa: E402
    MetaKernelConfig, MnkMatrix, assemble_mnk, inner_predictor_G, mnk_block, time_evolution,
)
from .ntk import NetConfig, NtkMatrix, ntk_matrix  # noqa: E402
from .regression import (  # noqa: E402
    BoundReport, MetaPrediction, expected_loss, fit_meta, generalization_bound, meta_predict,
    pfg_decompose, test_loss,
)
from .tasks import (  # noqa: E402
    TaskBatch, TaskData, add_label_noise, centroid_label_encode, gen_piecewise_tasks,
    gen_quadratic_tasks, load_tasks, save_tasks,
)

__version__ = "0.1.0"
