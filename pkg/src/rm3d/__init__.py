"""Desk-scale 3D radio-map toolkit: scene synthesis, a dominant-path channel
solver, dataset packaging, sparse sampling, diffusion samplers and metrics."""

from .dataset import (CHANNELS, ChannelThresholds, DatasetManifest, RadioMapVolume,
                      export_sample, import_sample, normalize, quantize_u8, split_dataset)
from .denoiser import DenoiserSpec, load_denoiser
from .diffusion import (GuidanceConfig, NoiseSchedule, analytic_gaussian_denoiser,
                        autoregressive_generate, ddim_step, ddpm_step, forward_sample,
                        generate, guided_correction, linear_schedule, predict_x0, simple_loss)
from .metrics import MetricReport, SsimConfig, error_metrics, evaluate_volume, ssim
from .propagation import (DominantPath, MaterialParams, VoxelChannel, channel_from_path,
                          dominant_path, fspl, los_visible, solve_volume)
from .sampling import (SampleMask, SparseObservations, apply_mask, interp_nearest,
                       random_mask, uniform_mask)
from .scene import (SceneParams, TxConfig, VoxelScene, generate_scene, place_transmitters,
                    rasterize_condition_maps, scene_from_height_map)

__version__ = "0.1.0"
