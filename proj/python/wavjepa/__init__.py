"""Python access to the wavjepa sampler, schedules, scene mixer, metric and trainer."""

import json as _json

from . import _wavjepa
from ._wavjepa import (
    Error,
    direct_convolve,
    ema_tau,
    fft_convolve,
    lr_at,
    mix_scene,
    pretrain_losses,
    profile_names,
    sample_blocks,
    sample_blocks_shared,
)

__all__ = [
    "Error",
    "config",
    "coverage_stats",
    "direct_convolve",
    "ema_tau",
    "fft_convolve",
    "generalizability_score",
    "lr_at",
    "mix_scene",
    "pretrain_losses",
    "profile_names",
    "sample_blocks",
    "sample_blocks_shared",
]


def coverage_stats(frames=200, trials=10000, seed=0, **sampler):
    """Monte Carlo coverage statistics as a dict; keyword args override sampler fields."""
    return _json.loads(_wavjepa.coverage_stats_json(frames, trials, seed, sampler))


def generalizability_score(table, model, baseline=""):
    """s(m) and per-task contributions for `model` in a model,task,score CSV."""
    return _json.loads(_wavjepa.generalizability_score_json(str(table), model, baseline))


def config(text="", is_json=False, profile="paper"):
    """Validated run configuration as a dict (profile defaults when text is empty)."""
    return _json.loads(_wavjepa.config_json(text, is_json, profile))
