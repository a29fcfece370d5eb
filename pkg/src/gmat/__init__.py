"""Gaussian mixture attention with growing prototypes and generative replay."""

from .autodiff import (Tensor, constant, finite_difference_check,
                       gaussian_sample, grad, logsumexp, maximum, relu)
from .codec import (ClassCentroids, Codec, build_codec, decode, encode,
                    label_match_loss, predict_class, update_centroids)
from .data import (Dataset, TaskStream, batches, denormalize, gen_blobs,
                   gen_moons, load_csv, load_idx, normalize, save_csv,
                   split_tasks, stratified_subsample)
from .errors import (ConfigError, ContractError, FormatError, GmatError,
                     NumericError)
from .growth import (Adam, GrowthConfig, GrowthHistory, IterationRecord,
                     MorphicModel, TrainConfig, apply_split, evaluate,
                     grow_until_converged, morphic_double,
                     splitting_direction, splitting_strength,
                     train_to_convergence)
from .metrics import assign_clusters, contingency_table, mapped_accuracy, nmi
from .mixture import (GmatLossBundle, LossWeights, PrototypeSet, distances,
                      init_prototypes, interpretability_losses,
                      kl_alignment_loss, mahalanobis, recon_loss, reconstruct,
                      responsibilities, softmin, total_loss,
                      weighted_batch_stats)
from .model import GmatModel, build_model
from .replay import (ReplayGenerator, continual_fit, replay_count,
                     sample_replay, snapshot_generator)
from .streams import split, substream

__version__ = "0.1.0"
