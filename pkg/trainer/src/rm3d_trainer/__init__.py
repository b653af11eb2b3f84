"""Training companion for the 3D radio-map toolkit: learns denoisers and
regression baselines from exported dataset trees, exports weights in the
shared record format for inference-side loading."""

from .data import SampleSet, load_samples, random_layer_mask
from .descriptor import NetSpec, unet_spec
from .model import DescriptorNet
from .train import Ema, TrainConfig, train_diffusion, train_regression

__version__ = "0.1.0"
