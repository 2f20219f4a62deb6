"""Seed discipline shared by every Monte Carlo entry point.

One master 64-bit seed per experiment. Trial i draws from
``np.random.default_rng(master_seed XOR i)``, so the stream a trial sees
depends only on (master_seed, i), never on scheduling or worker count.
"""
import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed, trial):
    """Child seed for one trial: master XOR trial index, masked to 64 bits."""
    return (int(master_seed) ^ int(trial)) & _MASK64


def trial_rng(master_seed, trial):
    """Fresh generator for one trial under the XOR splitting rule."""
    return np.random.default_rng(derive_seed(master_seed, trial))
