"""Filter stability toolkit for partially observed Markov processes."""

__version__ = "0.1.0"

from .finite_pomp import (  # noqa: F401
    FiniteDist,
    FinitePOMP,
    Trajectory,
    build_channel_matrix,
    filter_init,
    filter_sequence,
    filter_update,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    rn_identity_gap,
    sample_trajectory,
    smooth_x0,
)
from .errors import (  # noqa: F401
    AbsoluteContinuityViolated,
    FilterMergeError,
    Infeasible,
    InfiniteInitialDivergence,
    NonFiniteMoment,
    NonUniqueInvariant,
    PositivityViolated,
    QuadratureNotConverged,
    SingularDiagonal,
    SizeCapExceeded,
    ZeroEvidence,
)
