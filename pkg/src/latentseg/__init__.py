"""One-step latent-diffusion binary segmentation, desk scale.

A compact conditional denoiser predicts noise for a doubled mask/edge batch
in the latent space of a small convolutional codec; a single-step inversion
of the forward noising then yields clean mask and edge latents. Includes the
full evaluation-metric suite and a synthetic-shapes dataset generator.
"""

from .schedule import (
    Schedule,
    NoisyLatent,
    build_schedule,
    add_noise,
    one_step_denoise,
    ddpm_step,
    ddpm_step_to,
)
from .codec import Codec, CodecConfig, LatentTensor, encode, decode, train_codec
from .embedding import (
    BatchDiscriminativeEmbedding,
    DiscriminativeLabel,
    combine,
    timestep_embedding,
)
from .attention import (
    DBIABlock,
    StreamFeatures,
    dbia_forward,
    init_mutual_from_self,
    mutual_cross_domain_attention,
)
from .conditioning import InjectorHead, inject, resize_latent
from .unet import UNetConfig, UNetModel, build_unet, predict_noise
from .training import Sample, TrainConfig, cutmix, derive_edge, train, train_step
from .sampling import SamplerConfig, benchmark_paradigms, postprocess, sample
from .metrics import (
    MetricsReport,
    e_measure,
    evaluate_dirs,
    evaluate_pairs,
    f_max,
    f_weighted,
    mae,
    s_measure,
)
from .data import DatasetManifest, GenConfig, generate_synthetic, load_dataset

__version__ = "0.1.0"
