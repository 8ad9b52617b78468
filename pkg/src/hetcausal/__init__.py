"""Causal direction tests for heterogeneous populations.

Latent mechanism parameters are fitted under an additive noise model,
clustered with an imprecise number of components, and fed into a
cluster-adjusted HSIC test.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    HetCausalError, DataError, NumericalError, InvalidData, InvalidParameter, DegenerateData,
    SampleTooSmall, ClusterTooSmall, FormatError, ParseError, NumericalFailure,
    EstimationFailure, ClusteringFailure, GibbsFailure, InvalidMoments,
)
from .kernels import (  # noqa: E402
    KernelMatrix, HsicNullMoments, rbf_kernel_matrix, median_heuristic_bandwidth, center_kernel,
    hsic_biased, hsic_gradient, hsic_null_moments, gamma_quantile,
)
from .latent_anm import LatentConfig, LatentFit, fit_latent_params  # noqa: E402
from .clustering import ClusterConfig, ClusterModel, fit_clusters, gibbs_run  # noqa: E402
from .direction_test import (  # noqa: E402
    Direction, Choice, DirectionTestResult, DirectionDecision, test_direction, decide_direction,
)
from .datasets import DataPair, SimSpec, load_pair_file, standardize  # noqa: E402
