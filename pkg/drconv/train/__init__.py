from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, LayerConfig, ModelConfig, RunConfig, TrainConfig, load_run_config
from .data import Dataset, load_dataset, load_idx, synth_region_dataset, write_idx
from .loop import MetricsLog, TrainResult, evaluate, predict, train
from .network import Network, cross_entropy
from .optim import SGD, linear_decay
