"""Exact simulation and statistical verification of first-passage gossip
spread on flat tori.

The package is layered bottom-up: torus geometry and grid queries
(:mod:`~torus_gossip.torus`, :mod:`~torus_gossip.gridindex`), the embedded
branching clock and its limit variable (:mod:`~torus_gossip.branching`), the
limit coverage curves from the transform fixed point
(:mod:`~torus_gossip.laplace`), the event-driven simulator with snapshots
(:mod:`~torus_gossip.gossip`), sample statistics
(:mod:`~torus_gossip.stats`), and the config-driven studies plus CLI
(:mod:`~torus_gossip.config`, :mod:`~torus_gossip.experiments`,
:mod:`~torus_gossip.cli`).
"""

from .branching import (
    CmjParams,
    malthusian_lambda,
    sample_W,
    sample_w_batch,
    unit_roots_and_zeta,
)
from .config import CltConfig, CollapseConfig, VarianceConfig, load_config
from .errors import (
    ConfigError,
    ConvergenceError,
    FormatError,
    GeometryError,
    ResourceLimitError,
    SimulationError,
)
from .experiments import (
    ResidualRecord,
    StudyResult,
    clt_experiment,
    collapse_experiment,
    make_torus_state,
    provide_curves,
    t_window,
    variance_study,
)
from .gossip import (
    GossipState,
    Snapshot,
    coverage_fraction,
    load_snapshot,
    new_gossip_state,
    next_event,
    process_stats,
    restore,
    run_until,
    save_snapshot,
    snapshot,
    w_hat,
    w_star,
)
from .laplace import (
    GridSpec,
    LimitCurves,
    PhiGrid,
    c_hat,
    ell_and_dell,
    load_phi_cache,
    phi_mc,
    save_phi_cache,
    sigma2,
    solve_phi_fixed_point,
)
from .rng import StreamRegistry, make_stream, mix64
from .torus import NU_BALL, Disc, TorusSpec

__version__ = "0.1.0"

__all__ = [
    "CmjParams",
    "malthusian_lambda",
    "sample_W",
    "sample_w_batch",
    "unit_roots_and_zeta",
    "CltConfig",
    "CollapseConfig",
    "VarianceConfig",
    "load_config",
    "ConfigError",
    "ConvergenceError",
    "FormatError",
    "GeometryError",
    "ResourceLimitError",
    "SimulationError",
    "ResidualRecord",
    "StudyResult",
    "clt_experiment",
    "collapse_experiment",
    "make_torus_state",
    "provide_curves",
    "t_window",
    "variance_study",
    "GossipState",
    "Snapshot",
    "coverage_fraction",
    "load_snapshot",
    "new_gossip_state",
    "next_event",
    "process_stats",
    "restore",
    "run_until",
    "save_snapshot",
    "snapshot",
    "w_hat",
    "w_star",
    "GridSpec",
    "LimitCurves",
    "PhiGrid",
    "c_hat",
    "ell_and_dell",
    "load_phi_cache",
    "phi_mc",
    "save_phi_cache",
    "sigma2",
    "solve_phi_fixed_point",
    "StreamRegistry",
    "make_stream",
    "mix64",
    "NU_BALL",
    "Disc",
    "TorusSpec",
    "__version__",
]
