"""itevar: honest causal random forests with conditional effect-variance
estimation, plus the simulation scenarios and Monte Carlo harness used to
evaluate them."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .causal import (AipwEstimate, CausalForest, CenteredData,
                     NonIdentifiedError, SimilarityWeights,
                     estimate_ate_aipw, fit_causal_forest, fit_effect_forest,
                     load_causal_forest, orthogonalize, predict_cate,
                     save_causal_forest, similarity_weights)
from .data import ObservedData, read_dataset_csv, write_dataset_csv
from .extended import (ExtendedFit, ITEDensity, extend_causal_forest,
                       fit_extended, ite_density, pep_cate_only, pep_gaussian,
                       population_sd, sd_cate_only)
from .forest import (ForestParams, OOBUndefinedError, RegressionForest,
                     fit_regression_forest)
from .harness import (AggregateRow, EstimatorStats, ReplicationResult,
                      aggregate, density_band, run_experiment,
                      run_replication)
from .scenarios import (ScenarioConfig, SimulatedDataset, TrueTargets,
                        generate_dataset, scenario_config, true_targets)

__version__ = "0.1.0"
