from .conv_base import ConvBase, build_conv_base, shape_trace
from .head import Head, build_head
from .hybrid import (Model, SingleTaskModel, HybridModel, forward, build_single_task, build_hybrid,
                     set_frozen, reinit_head, extract_features, predict, predict_head, accuracy,
                     head_accuracy, save_model, load_model)
