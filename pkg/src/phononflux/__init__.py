"""Harmonic crystals on a periodic torus: exact spectral dynamics, random initial
fields, long-time covariances and the limiting energy current."""

__version__ = "0.1.0"

from .errors import (CertificationError, ConditionError, ConfigError, GridMismatchError, ModelError,  # noqa: E402
                     NumericalError, PhononfluxError, SingularBranchError)
from .grid import TorusGrid  # noqa: E402
from .lattice import (DispersionData, InteractionMatrix, build_elastic_lattice, check_conditions,  # noqa: E402
                      critical_set, dispersion, load_model, symbol, symbol_gradient)
from .propagator import (FieldState, PropagatorSymbol, evolve, evolve_conjugate,  # noqa: E402
                         evolve_covariance_spectral, green_function, hamiltonian, propagator_symbol)
from .random_fields import (ClippedMeasure, SpectralDensity, TwoTempSpec, clipped_density,  # noqa: E402
                            gaussian_sample, gibbs_spectral_density, nongaussian_transform,
                            triangular_density, two_temperature_sample, white_noise_density)
from .covariance import (CovarianceEstimate, LimitCovariance, TestFunction, clt_diagnostics,  # noqa: E402
                         exact_covariance_propagation, limit_covariance, make_test_function,
                         mc_covariance, quadratic_form, scalar_limit_covariance)
from .current import (CurrentEstimate, gibbs_limit_current, limit_current, local_current,  # noqa: E402
                      mean_current_from_covariance, second_law_check)
from .runner import ExperimentConfig, decay_probe, run_experiment  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
