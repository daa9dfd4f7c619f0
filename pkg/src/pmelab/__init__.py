"""pmelab: the porous medium equation on negatively curved model manifolds.

A numerical laboratory built around four pieces:

* ``geometry``   -- radial metric profiles psi (closed-form and
  ODE-defined), curvatures, Riccati-style convergence diagnostics,
  ball volumes;
* ``chvar``      -- the radial change of variables between the manifold
  PME and the weighted Euclidean PME, in both directions, with the
  asymptotic density classification;
* ``barriers``   -- explicit supersolution/subsolution families with
  machine-checked admissible constants and residual verification;
* ``solver``     -- an explicit conservative finite-volume scheme for
  the radial PME with sup-norm / free-boundary / mass tracking, and the
  barrier sandwich check;
* ``asymptotics`` -- predicted large-time exponents per curvature regime
  and log-log fitting of simulated decays.

The ``pmelab`` command line drives config-described experiments; see the
README for the file format and examples.
"""

from .errors import (ConfigError, ConstraintError, NumericalError,
                     PmelabError, RegimeError, VerificationFailure)
from .geometry import (AsymptoticClass, CurvatureProfile, ModelFunction,
                       curvature_envelope, curvatures, make_closed_form,
                       riccati_diagnostic, solve_psi_from_curvature,
                       sphere_area, volume)
from .chvar import (ChangeOfVariables, TransplantedBarrier, WeightClass,
                    WeightProfile, dim_lift_2d, forward_map, inverse_map,
                    log_map_2d, verify_table1)
from .barriers import (BarrierSpec, DatumStats, barenblatt_qe, evaluate,
                       lower_qh_critical, lower_qh_subcritical, residual,
                       upper_qh_critical, upper_qh_subcritical,
                       weighted_euclidean)
from .solver import (Grid, RadialField, Trajectory, box_datum, bump_datum,
                     diagnostics, evolve, make_grid, sandwich_check)
from .asymptotics import (FitResult, RegimePrediction, fit_exponents,
                          fit_support, predict, volume_check)

__version__ = "0.1.0"
