"""Truncated tensors, their matrix generating functions, path developments and distances."""

from .development import SampledPath, develop, extend_map, signature
from .distances import DistanceSpec, EmpiricalMeasure, MapParameters, distance_gradient, empirical_distance_sq, train
from .harness import PermTestConfig, permutation_test, run_experiment
from .matrix_core import LinearMapFamily, MatrixClass, expm
from .recovery import Variant, bm_oracle, recover_coefficient, recover_tensor, tensor_oracle
from .stochastic import FbmConfig, bm_expected_signature, simulate_fbm
from .tensor_core import TruncatedTensor, tensor_exp, tensor_product

__version__ = "0.1.0"
