"""Federated latent factorization of sparse user-service-time QoS tensors."""

from .centralized import train_centralized
from .federation import run_training
from .lft_math import Hyperparams, LatentFactors, init_factors, predict
from .metrics import EvaluationSet, RoundReport, mae, rmse
from .synth import SynthSpec, generate
from .tensor_store import Entry, Shape, SparseTensor, SplitSpec, build, partition_by_user, split

__version__ = "0.1.0"
