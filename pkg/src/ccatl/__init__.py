"""Heterogeneous transfer learning for tabular data with CCA, KCCA and DCCA."""
__version__ = "0.1.0"

from .cca import (CcaModel, KccaModel, KernelSpec, NumericalError, fit_kernel_cca,
                  fit_linear_cca, gen_eig_sym, transform_kernel, transform_linear)
from .data import (Dataset, DataError, FeatureMeta, FeaturePartition, SynthConfig, load_csv,
                   normalize, numerical_rank, partition_features, save_csv, synth_generate)
from .dcca import (DccaModel, DccaTrainConfig, Mlp, dcca_gradient, dcca_objective, init_mlp,
                   mlp_backward, mlp_forward, train_dcca, transform_deep)
from .divergence import (DivergenceReport, coral_loss, divergence_report, mmd,
                         proxy_a_distance)
from .evaluation import EvalResult, evaluate_baseline, knn_classify, stratified_folds
from .impute import (ImputeMode, UnifiedPair, cross_transfer_impute, heom_distance,
                     knn_impute, unify)
from .pairing import PairedViews, distance_matrix, nearest_pairing
from .serialize import load_model, save_model
from .transfer import BASELINES, TransferSettings, fit_transfer
