"""embedlab: embedding-loss laboratory.

Angular-margin and class-center softmax losses with analytic gradients,
prototype update strategies, a small from-scratch MLP trainer, open-set
verification metrics, and an imbalance study runner.
"""

from .centers import (CenterBank, CenterStrategy, cold_start_bank,
                      exact_centers, load_bank, save_bank, update_from_batch,
                      weight_center_gap)
from .data import (Batch, IdxCountMismatchError, IdxFormatError,
                   IdxMagicError, IdxTruncatedError, ImbalanceSpec,
                   LabeledDataset, apply_imbalance, gen_gaussian_mixture,
                   load_idx, sample_batches, save_csv, write_idx)
from .evaluation import (EmbeddingStats, EvalReport, PairScores, cmc,
                         cosine_matrix, dir_at_far, embedding_stats,
                         mean_average_precision, score_aligned_pairs,
                         score_pairs, vr_at_far, write_report)
from .losses import (LossGrad, MarginSpec, aux_center_loss, center_softmax,
                     margin_softmax, npairs_loss, psi_eval, psi_grad,
                     softmax_ce)
from .model import (MlpParams, MlpSpec, MomentumState, init_params,
                    load_checkpoint, mlp_backward, mlp_forward,
                    save_checkpoint, sgd_step)
from .numerics import (DegenerateNormError, RandomStream, cosine_angle,
                       l2_normalize, log_sum_exp)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
