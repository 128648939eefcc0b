"""Entropy production and time reversibility of jump diffusions.

Simulation, nonlocal Fokker-Planck evolution, thermodynamic functionals,
path-space relative entropy and a four-way reversibility report.
"""
from .density import (DensityField, Grid, LogDensity, PowerLawTail, estimate_density, gaussian_density,
                      log_density_gradient, stable_stationary_density)
from .errors import *  # noqa: F401,F403
from .fokker_planck import (CurrentField, Discretization, FPESolution, currents, export_snapshots, solve_fpe,
                            stability_bound, stationary_residual)
from .girsanov import EPRKLEstimate, LogRNAccumulator, estimate_epr_kl, pathwise_log_rn
from .library import builtin_matrix, example1_spec, example2_spec, load_spec, spec_from_dict
from .model import (JumpKernel, JumpMap, ProcessSpec, build_jump_kernel, check_diffusion, check_integrability,
                    check_regularity_E, stable_kernel)
from .reversibility import (ReversibilityReport, Thresholds, check_detailed_balance, check_gradient_structure,
                            full_report, generator_asymmetry, mc_battery, mc_reversibility_test)
from .simulate import (Path, PathEnsemble, simulate_ensemble, simulate_path, simulate_reversed_ensemble,
                       simulate_reversed_path, simulate_stable_path)
from .thermo import (EPRResult, ThermoSeries, entropy_production_rate, free_energy, heat_dissipation,
                     thermo_series, work_rate)

__version__ = "0.1.0"
