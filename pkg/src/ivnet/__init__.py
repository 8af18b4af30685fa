"""Two-stream ConvLSTM video interaction classifier on a self-contained
numpy-backed autodiff tensor core."""

from .model import (FRAME_DIFFERENCE, RAW_FRAMES, ConvLSTMCell, ConvLSTMState,
                    EncoderConfig, EncoderStage, InteractionNet, ModelConfig,
                    convlstm_step, count_parameters, forward_batch,
                    forward_video, prepare_input_sequence, zero_state)
from .pipeline import (AugmentationPolicy, DatasetManifest, NormalizationStats,
                       VideoClip)
from .rng import Rng
from .tensor import Tape, Tensor, backward, no_grad
from .train import Checkpoint, Metrics, TrainConfig, evaluate_ten_crop, predict, train

__version__ = "0.1.0"
