"""Adaptive scan-line subsampling for sequential sector-scan imaging.

A Sylvester-flow variational posterior infers latent frame state from a
handful of observed scan lines; greedy information-gain policies pick the
next frame's lines from the posterior's predictive uncertainty.
"""

from .config import Config, DataConfig, config_from_dict, load_config
from .datasets import (SPLITS, VideoDataset, iter_split, load_echonet_format,
                       load_videos, save_videos, synth_phantom_dataset)
from .errors import (ConfigurationError, FlowscanError, ModelStateError,
                     NumericalError, RejectedInputError, TrainingError)
from .evaluate import (AcquisitionConfig, MetricReport, benchmark_latency,
                       evaluate, replay_decision_log)
from .masks import (NoiseModel, Observation, ScanLineMask, apply_mask,
                    equispaced_mask, full_mask, uniform_random_mask,
                    variable_density_mask, zero_fill)
from .metrics import (PSNR_CAP, SSIM_PARAMS, l1_metric, mse_metric,
                      psnr_metric, ssim_metric)
from .model import (FlowPosterior, FlowStack, ModelConfig, PosteriorParams,
                    count_parameters, desk_config, flow_forward, flow_inverse,
                    load_checkpoint, orthonormalize, save_checkpoint)
from .phantom import PhantomConfig, generate_video
from .polar import (PolarGridSpec, cartesian_to_polar, density_weights,
                    polar_to_cartesian, validity_mask)
from .policy import (POLICY_NAMES, PolicyConfig, PolicyDecision,
                     PosteriorEnsemble, covariance_policy, draw_ensemble,
                     empirical_observation_covariance, generate_candidates,
                     line_variance_scores, logdet_psd, make_policy,
                     trace_policy)
from .training import (LossBreakdown, TrainConfig, free_energy, iwae_bound,
                       pretrain_generative, train_inference)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig", "Config", "ConfigurationError", "DataConfig",
    "FlowPosterior", "FlowStack", "FlowscanError", "LossBreakdown",
    "MetricReport", "ModelConfig", "ModelStateError", "NoiseModel",
    "NumericalError", "Observation", "POLICY_NAMES", "PSNR_CAP",
    "PhantomConfig", "PolarGridSpec", "PolicyConfig", "PolicyDecision",
    "PosteriorEnsemble", "PosteriorParams", "RejectedInputError",
    "SPLITS", "SSIM_PARAMS", "ScanLineMask", "TrainConfig", "TrainingError",
    "VideoDataset", "apply_mask", "benchmark_latency", "cartesian_to_polar",
    "config_from_dict", "count_parameters", "covariance_policy",
    "density_weights", "desk_config", "draw_ensemble",
    "empirical_observation_covariance",
    "equispaced_mask", "evaluate", "flow_forward", "flow_inverse",
    "free_energy", "full_mask", "generate_candidates", "generate_video",
    "iter_split",
    "iwae_bound", "l1_metric", "line_variance_scores", "load_checkpoint",
    "load_config", "load_echonet_format", "load_videos", "logdet_psd",
    "make_policy", "mse_metric", "orthonormalize", "polar_to_cartesian",
    "pretrain_generative", "psnr_metric", "replay_decision_log",
    "save_checkpoint", "save_videos", "ssim_metric", "synth_phantom_dataset",
    "trace_policy", "train_inference", "uniform_random_mask",
    "validity_mask", "variable_density_mask", "zero_fill",
]
