"""p-adaptive Cartesian treecode for the free-space Poisson potential on tetrahedral meshes."""

from .errors import (
    CoverageError,
    EvaluationError,
    InvalidDomainError,
    MACViolationError,
    SingularEvaluationError,
)
from .expansion import (
    NodeMoments,
    cartesian_term_sum,
    compute_moments,
    far_field_eval,
    gegenbauer,
    multi_index_enumerate,
    n_terms,
    taylor_coeffs,
)
from .interaction import InteractionLists, build_interaction_lists, mac_geometry, mac_scan
from .mesh import (
    HierarchyTree,
    TetMesh,
    build_box_mesh,
    build_tree,
    load_mesh,
    refine_uniform,
    save_mesh,
    uniform_tree,
)
from .quadrature import degree6_rule, integrate, leaf_quadrature
from .solver import (
    FALLBACK,
    Solution,
    SolverConfig,
    calibrate_pmax,
    direct_solve,
    prepare,
    select_order,
    solve,
    treecode1_solve,
    treecode2_solve,
)

__version__ = "0.1.0"
