"""Early-exit schedules for diffusion samplers, at toy scale.

A score network made of residual blocks can stop after ``S(t)`` blocks,
with ``S`` depending on which time interval ``t`` falls in.  This package
holds the diffusion maths, the network with exact gradients, exit schedules
and their cost model, EMA fine-tuning, four samplers, metrics and
experiment runners.
"""

from .datasets import Dataset
from .diffusion import (GaussianOracle, LossConfig, NoiseSchedule, eps_to_score,
                        gaussian_oracle_eps, kl_vlb_term, linear_beta_schedule, loss_simple,
                        mu_theta, perturb, posterior_q, score_to_eps)
from .errors import (CatalogError, ConfigurationError, ContractError, MismatchError,
                     TrainingError)
from .metrics import frechet_from_moments, gaussian_frechet, sliced_wasserstein
from .network import (NetworkConfig, ScoreNetwork, flop_count, forward_early_exit, forward_full,
                      init_network, param_gradients)
from .samplers import (RunStats, SamplerConfig, ddim_step, ddpm_step, em_step, langevin_step,
                       sample_loop)
from .schedules import (Architecture, ExitSchedule, all_keep, lookup_blocks, make_dn_schedule,
                        make_named_schedule, predicted_acceleration, resolve_schedule)
from .training import TrainConfig, Trainer, ema_update, finetune_ase, lambda_schedule, \
    plateau_check, pretrain

__version__ = "0.1.0"
