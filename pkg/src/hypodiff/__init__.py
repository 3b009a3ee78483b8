"""Adaptive quasi-likelihood estimation for partially observed degenerate diffusions."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Dimensions,
    ModelSpec,
    ParamBox,
    ThetaBlocks,
    builtin_fhn,
    builtin_linear,
    get_model,
    validate_model,
    with_fd_derivatives,
)
from .simulate import SamplePath, SamplingDesign, empirical_moments, simulate_path, simulate_paths  # noqa: E402
from .estimators import (  # noqa: E402
    AdaptiveReport,
    EstimatorConfig,
    MHConfig,
    PriorSpec,
    SchemeSpec,
    qbe_metropolis,
    qbe_quadrature,
    qmle,
    run_adaptive,
)
from .asymptotics import confidence_intervals, gamma_blocks  # noqa: E402
