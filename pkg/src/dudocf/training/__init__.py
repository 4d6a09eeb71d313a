from .losses import LossWeights, image_loss, iteration_losses, projection_loss, total_loss
from .optim import Adam, adam_step
from .trainer import (
    LOG_COLUMNS,
    NumericalError,
    TrainConfig,
    TrainResult,
    make_batch,
    make_optimizer,
    predict,
    train,
    validate,
    write_log,
)
