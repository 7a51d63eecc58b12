"""Permuted adaptive instance normalization on a small numpy autodiff stack."""
from .models import Arch, build_autoencoder, build_classifier, forward, stats_swap_inference
from .norm import (
    BackpropScheme, Mode, PAdaINConfig, Permutation, PermutationPolicy, StatsSource, adain, batch_norm,
    channel_stats, instance_norm, padain_forward, sample_permutation,
)
from .tensor import Tensor, backward, no_grad
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"
