"""Kronecker-product compressed recurrent networks.

Set ``KPK_DISABLE_JIT=1`` before import to run the pure-numpy kernels instead
of the numba-compiled ones; ``kpk.kernels.BACKEND`` names the active path.
"""
from .analysis import SpectralReport, condition_number, rank_numeric, singular_values, spectral_report, svd
from .baselines import LowRankPair, SparseCSR, lmf_factorize, lmf_rank_for_target, magnitude_prune
from .cells import CellSpec, NetworkSpec, build_compressed_network, parameter_count, sequence_forward
from .errors import DataError, FormatError, InfeasibleError, KPKError, NumericError, ResourceError, ShapeError
from .kpcore import (
    HybridMatrix,
    KronFactorPair,
    MultiKronChain,
    ShapePlan,
    enumerate_kp_ratios,
    flop_count,
    hkp_matvec,
    hkp_rank_rows_for_target,
    kp_matvec,
    kp_matvec_grad,
    kron_expand,
    select_factor_shapes,
)
from .quant import dequantize8, quantize8, quantize_network, quantized_network_forward
from .train import TrainConfig, bptt_grads, synth_task_generate, train_loop

__version__ = "0.1.0"
