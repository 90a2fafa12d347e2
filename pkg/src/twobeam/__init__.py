"""Two-beam absolute nonlinearity analysis for single-photon detectors."""

__version__ = "0.1.0"

from .errors import (FitError, NoSolutionError, ParameterDomainError, SchemaError,
                     SubDarkRateError)
from .models import (DetectorParams, ModelKind, ResponseModel, afterpulse_equivalent_params,
                     delta_from_rates, inverse_response, model_delta_curve, peak, response)
from .sim import (EventStream, SimConfig, apply_detector, empirical_rate_std,
                  generate_arrivals, simulate_detected_rate)
from .stats import (AllanSeries, ChiSquareReport, UncertaintyBound, allan_deviation,
                    chi_square, shot_noise_sigma_delta, sub_poissonian_sigma_rate,
                    uncertainty_bound)
from .harness import (Drift, MeasurementPlan, MeasurementRecord, NonlinearityPoint, Phase,
                      estimate_point, optimal_allocation, run_cycle, sweep, synthetic_points)
from .fitting import FitResult, fit_all_models, fit_delta
