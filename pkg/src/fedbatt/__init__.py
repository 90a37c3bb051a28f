"""Energy-aware federated learning on a simulated heterogeneous device fleet.

A deterministic, numpy-only simulator in which battery-constrained devices
train layer-wise sub-models of a shared classifier, and a cooperative
multi-agent Q-learner decides each round which sub-model every device gets
and which devices participate at all.
"""

from .autodiff import Tape, Tensor
from .config import (config_from_dict, config_to_dict, dump_config,
                     load_config, reference_text)
from .data import (LabeledDataset, PartitionPlan, dirichlet_partition,
                   generate_synthetic, load_dataset, save_dataset,
                   shard_label_entropy)
from .devices import (DEFAULT_CLASSES, DeviceProfile, DeviceState,
                      EnergyLedgerError, build_population)
from .model import (GradientUpdate, LayerwiseModel, aggregate_layerwise,
                    evaluate, extract_submodel, load_model, local_train,
                    save_model)
from .orchestrator import (SCHEDULERS, ConfigError, DataConfig, DeviceConfig,
                           Experiment, ExperimentConfig, ExperimentResult,
                           ModelConfig, RunConfig, TrainConfig, run_experiment,
                           seed_streams)
from .qmix import (QmixConfig, QmixLearner, RewardWeights, load_learner,
                   save_learner)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor",
    "config_from_dict", "config_to_dict", "dump_config", "load_config",
    "reference_text",
    "LabeledDataset", "PartitionPlan", "dirichlet_partition",
    "generate_synthetic", "load_dataset", "save_dataset",
    "shard_label_entropy",
    "DEFAULT_CLASSES", "DeviceProfile", "DeviceState", "EnergyLedgerError",
    "build_population",
    "GradientUpdate", "LayerwiseModel", "aggregate_layerwise", "evaluate",
    "extract_submodel", "load_model", "local_train", "save_model",
    "SCHEDULERS", "ConfigError", "DataConfig", "DeviceConfig", "Experiment",
    "ExperimentConfig", "ExperimentResult", "ModelConfig", "RunConfig",
    "TrainConfig", "run_experiment", "seed_streams",
    "QmixConfig", "QmixLearner", "RewardWeights", "load_learner",
    "save_learner",
    "__version__",
]
