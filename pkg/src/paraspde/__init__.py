"""Paracontrolled calculus on periodic grids: products, noise, trees, renormalization and solvers."""

from .grid import (Grid, HeatQuadrature, Propagator, RealField, SpaceTimeField, SpectralField, duhamel_solve,
                   heat_kernel_functional, heat_propagate, read_snapshot, write_snapshot)
from .besov import (UNIT, AnalysisParams, DyadicPartition, Weight, besov_norm, holder_norm, interpolation_gap,
                    lp_block, partition_for, spacetime_norms, sup_norm)
from .paracalc import (LocalizationSchedule, Mollifier, Paracalc, commutator, localize_gt, localize_le,
                       modified_para, para_ge, para_gt, para_le, para_lt, resonant)
from .noise import (ContinuumCovariance, GaussianEnsemble, LatticeCovariance, NoiseSpec, cov_Y, default_dt,
                    rescale_eta, sample_eta, sigma_eps, stationary_Y, wick_power)
from .chaos import (ChaosExpansion, LambdaVector, NonlinearityFamily, NonlinearitySpec, RenormConstants,
                    assumption1_check, chaos_coeffs, d_constants, d_constants_mc, expansion_coefficients,
                    hermite, lambda_vector, tilde_F)
from .trees import (Enhancement, HomogeneityTable, build_enhancement, limit_enhancement, measure_regularity,
                    reference_trees, decay_stats)
from .solver import DivergenceError, converge_sweep, simulate_u_eps, solve_classical
from .decomposition import (DecompositionError, DecompositionState, NormMonitor, PreconditionError,
                            calibrate_M_delta, decompose, max_principle_check)

__version__ = "0.1.0"
