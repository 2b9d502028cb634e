"""Time-domain preamble-based channel estimation for FBMC/OQAM."""

__version__ = "0.1.0"

from .errors import ConfigError, DecompositionError, EstimationError, StructureError
from .filterbank import FbmcConfig, PrototypeFilter, analyze, apply_channel, design_prototype, synthesize
from .sysmodel import (InterferenceConstants, SystemMatrices, TwoSymbolMatrices, build_B,
                       build_gamma, build_two_symbol, check_two_symbol_orthogonality,
                       decompose_Cbar, eig_circulant, interference_constants, system_model, whiten)
from .preamble import (PreambleSpec, design_cpofdm, design_full_optimal, design_iamc,
                       design_sparse_optimal, sfb_energy)
from .estimators import (ChannelRealization, EstimationResult, blue_smooth, cpofdm_estimate,
                         dft_interpolate, iam_estimate, td_estimate, td_estimate_sparse,
                         td_estimate_two_symbol)
from .montecarlo import ChannelProfile, SweepResult, gen_channel, power_normalize, run_sweep
