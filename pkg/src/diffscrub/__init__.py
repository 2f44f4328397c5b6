"""diffscrub: train small denoising diffusion models and selectively remove
the influence of individual training samples, with time-window and
frequency-filter selection composable around any unlearning objective."""

from .autodiff import (NonFiniteError, ShapeError, Tensor, backward, grad,
                       grad_check, no_grad)
from .config import RunConfig, apply_overrides, config_hash, parse, serialize
from .datasets import DatasetSpec, SplitDataset, make_dataset, read_array, write_array
from .diffusion import (ArchSpec, Denoiser, NoiseSchedule, denoise_from,
                        epsilon_loss, forward_noise, load_checkpoint,
                        make_schedule, reverse_step, sample, save_checkpoint)
from .metrics import (Embedding, PsdCurve, SscdNormConfig, forget_hit_rate,
                      freq_decomposed_grad_norm, grad_norm_of, make_embedding,
                      psd_radial, retain_coverage, similarity_trajectory,
                      sscd_norm, sscd_plain)
from .objectives import (PreferenceConfig, SissConfig, UnlearnBatch, UnlearnRun,
                         dpo_forget_loss, draw_batch, erasediff_loss, ga_loss,
                         kto_forget_loss, siss_loss, siss_sample_mixture,
                         siss_weights, unlearn_step)
from .selective import (BranchFilters, TimeWindowConfig, pdf, sample_timestep,
                        sample_timesteps, selective_wrap, timestep_pmf,
                        uniform_window)
from .spectral import (FrequencyFilterConfig, Spectrum, dft2, idft2, low_pass,
                       radial_mask)
from .harness import eval_suite, run_unlearn, toyfig_sweep, train_base

__version__ = "0.1.0"
