from .bda import BDANet
from .cascade import MU_REF, DuDoCFNet, Physics, Scaling
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, CascadeConfig, ablation_config
from .tsp import TSPNet
