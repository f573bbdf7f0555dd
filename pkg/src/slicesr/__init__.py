"""Arbitrary-ratio slice interpolation for 3D volumes with a local-aware implicit model."""
from .model import ModelConfig, SliceSR, build_model, predict_intensity, super_resolve, tiny_config
from .volume import Volume, load_volume, make_query_grid, normalize, save_volume, simulate_lr, smooth_random_field

__version__ = "0.1.0"
