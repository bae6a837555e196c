"""Encoders, predictors, losses, the two architectures and training."""
from .asp import FFWASP, SSPASP, ASPModel, Prediction, build_model, chain_policy, feasibility_flags, infer
from .batching import Batch, ContextCache, make_batch, positions_to_world, to_ego
from .config import ActionScaling, LossConfig, ModelConfig
from .layers import GRU, MLP, Conv2d, GRUCell, Linear, Module
from .losses import (classification_term, huber_term, huber_value, loss_ffw, loss_ssp_total, mode_select,
                     mode_select_batch, multimodal_terms, regression_term)
from .networks import (ActionPredictor, ActionReconstructor, ConvEncoder, FeaturePredictor, Features, ModeSet,
                       VectorEncoder, build_encoder, encode)
from .training import (DatasetConfig, RunConfig, ScheduleConfig, TrainResult, load_model, load_run_config,
                       prepare_data, save_model, save_run_config, scaling_from_snippets, train, train_steps)
