"""Numerical calculus for semimartingale local time.

Building blocks:

* :mod:`ltcalc.measures`  -- Radon measures, BV functions, Stieltjes and
  two-parameter (Vitali) integration;
* :mod:`ltcalc.paths`     -- Brownian drivers, Euler schemes, Ito sums on
  uniform grids with counter-based reproducible randomness;
* :mod:`ltcalc.localtime` -- Tanaka and occupation-density local-time
  estimators, local-time fields, side conventions;
* :mod:`ltcalc.ltspace`   -- the local time-space integral Lambda(H) in its
  simple-function, time-density, space-density, Vitali and shifted forms;
* :mod:`ltcalc.calculus`  -- residual verifiers for change-of-variables and
  limit identities;
* :mod:`ltcalc.sdelt`     -- SDEs involving local time, solved via the
  increasing space transform that removes the local-time term (skew
  Brownian motion as the flagship case);
* :mod:`ltcalc.experiments` / :mod:`ltcalc.cli` -- the reproducible batch
  experiment runner.
"""

from .errors import (ContractError, NumericDomainError, ResolutionError,
                     RepresentationUnavailableError, VariationUnboundedError)
from .measures import (BVFunction, RadonMeasure, Rect, dirac, lebesgue,
                       measure_integrate, stieltjes_integrate, stieltjes_measure,
                       total_variation, vitali_integrate, zero_measure)
from .paths import (RNG_ALGORITHM, RngStream, SamplePath, TimeGrid,
                    brownian_increment_matrix, brownian_path, euler_solve,
                    euler_solve_matrix, ito_integral, quadratic_variation)
from .localtime import (LocalTimeField, SideConvention, local_time_field,
                        local_time_occupation, local_time_tanaka,
                        step_approximation, symmetric_from_right)
from .ltspace import (CrossCheckReport, LtsResult, SpaceDensity, TimeDensity,
                      TimeSpaceFunction, bouleau_yor, lts_cross_check,
                      lts_shifted, lts_simple, lts_space_density,
                      lts_time_density, lts_vitali)
from .calculus import (CovFunction, GhomrasniReport, ResidualReport,
                       RiemannSumReport, SmoothPiece, change_of_local_time_check,
                       cov_residual, ghomrasni_limit, ito_tanaka_check,
                       ltc_residual, riemann_sum_localtime)
from .sdelt import (SdeltSpec, TransformPair, Violation, absorb_drift,
                    build_transform, load_sdelt_spec, skew_bm, skew_spec,
                    solve_sdelt, solve_sdelt_terminals, transformed_coeffs,
                    validate_spec, verify_sdelt)

__version__ = "0.1.0"
