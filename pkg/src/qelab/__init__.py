"""Desk-scale quantum-ergodicity laboratory for the Anderson model on regular graphs.

Modules: graphs (regular-graph generation and structure), anderson (operator
assembly and spectra), tree_green (cavity Green-function engine on the
infinite tree and on universal-cover lifts), qe (windowed eigenfunction
statistics), esd (spectral-measure diagnostics), cli (experiment runner).

Hot kernels are numba-compiled by default; set QELAB_NO_NUMBA=1 to select
the pure-numpy fallback (bit-identical results, different speed).
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
from .anderson import (  # noqa: F401
    PotentialAssignment,
    PotentialSpec,
    SpectralData,
    assemble,
    eigendecompose,
    sample_potential,
)
from .graphs import (  # noqa: F401
    InjectivityProfile,
    RegularGraph,
    distance_and_geodesic,
    exp_check,
    generate_random_regular,
    girth,
    injectivity_radius,
    load_graph_json,
    save_graph_json,
)
from .esd import (  # noqa: F401
    esd_compare,
    ids_density,
    kesten_mckay_cdf,
    kesten_mckay_density,
    lln_moment_check,
)
from .qe import (  # noqa: F401
    Kernel,
    Observable,
    QEReport,
    average_equivalence_check,
    edge_kernel,
    kernel_average_general,
    kernel_average_simple,
    make_observable,
    mass_distribution_check,
    qe_statistic_diag,
    qe_statistic_kernel,
)
from .tree_green import (  # noqa: F401
    GreenMomentTable,
    LiftedGreen,
    SpectralParameter,
    TreeSweepResult,
    distance_ratio_profile,
    forward_recursion_tree,
    free_forward_green,
    free_forward_green_complex,
    green_along_path,
    green_condition_moments,
    green_diagonal,
    lifted_green,
    mc_expectation_im_green,
)
