"""Patch-local mesh movement (r-adaptation) for unstructured triangular meshes."""

from .errors import (
    AdaptationError,
    EquimeshError,
    FormatError,
    GeometryError,
    NumericalError,
    PerturbationError,
    RecoveryError,
    SolverError,
    TopologyError,
    TrainingDivergedError,
    ValidationError,
)
from .mesh import (
    Mesh,
    NodePatch,
    build_interior_patches,
    build_patch,
    denormalize_center,
    generate_unit_square_mesh,
    load_mesh,
    normalize_patch,
    perturb_nodes,
    save_mesh,
    signed_area,
    structured_unit_square_mesh,
    tangling_ratio,
)
from .interp import LinearInterpolant, Triangulation, delaunay, interpolate
from .monitor import (
    MonitorField,
    build_monitor,
    density_interpolant,
    monitor_from_raw,
    recover_gradient,
    recover_hessian,
)
from .metric import (
    ElementMetric,
    element_metric,
    equidistribution_loss,
    global_uniformity,
    patch_variance,
    total_variance_check,
)
from .direct import DirectMoveConfig, direct_move, direct_step, patch_variance_gradient
from .neural import DeformModel, forward, load_model, save_model
from .training import PatchCorpus, TrainConfig, loss_and_gradient, train
from .fem import (
    HELMHOLTZ_SUITE,
    POISSON_TABLE_SUITE,
    PROBLEMS,
    PDEProblem,
    error_reduction,
    get_problem,
    l2_error,
    solve,
)
from .pipeline import (
    AdaptConfig,
    AdaptReport,
    MonitorConfig,
    adapt,
    gen_training_corpus,
    run_table1,
)
from .render import render_svg

__version__ = "0.1.0"
