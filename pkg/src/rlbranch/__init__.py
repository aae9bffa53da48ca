"""Branching particle systems with reproduction driven by the remaining lifetime."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ConfigError, LifetimeDistribution, ModelSpec, NumericsConfig, OffspringLaw, RateFunction,
    TestFunction, ValidationReport, build_model, load_config, mean_total_offspring, validate,
)
from .renewal import (  # noqa: E402
    LimitFunctionals, MalthusianSolution, RenewalGrid, SubcriticalError, clt_variance,
    limit_functionals, malthusian, mean_measure, mean_semigroup, repro_density, second_moment,
)
from .extinction import (  # noqa: E402
    ExtinctionResult, PhiCurve, extinction_curve, extinction_prob, laplace_march, laplace_Y,
    offspring_total_gf, phi_limit, psi_fun,
)
from .simulator import (  # noqa: E402
    TrajectoryResult, observables, run_ensemble, sample_birth_process, sample_Y,
    simulate_trajectory,
)
from .verify import (  # noqa: E402
    CheckReport, check_clt, check_distributional, check_first_moments, check_variance,
    verify_all,
)
