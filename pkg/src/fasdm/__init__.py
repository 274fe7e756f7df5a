"""Channel estimation for 2D fluid antenna surfaces with a diffusion prior."""

from .channel import ChannelSample, FasGeometry, PathSet, generate_channel, generate_dataset, load_dataset
from .measurement import (Observation, SpectralMaps, SwitchSchedule, build_schedule,
                          build_spectral_maps, complexify, from_spectral, observe,
                          pad_observation, realify, to_spectral)
from .diffusion import (NoiseSchedule, TrainConfig, ancestral_sample, ancestral_step,
                        forward_sample, make_schedule, train)
from .ddrm import DdrmHyper, SpectralState, Trajectory, estimate, init_latent, make_trajectory, posterior_step, predict_x0
from .baselines import Dictionary, build_angle_dictionary, build_dft_dictionary, omp_estimate, sbl_estimate
from .bench import ExperimentConfig, ResultRow, measure_latency, nmse, run_benchmark, snr_to_sigma

__version__ = "0.1.0"
