import math
import os
from pathlib import Path

import numpy as np
import pytest

import wavjepa

DATA = Path(__file__).resolve().parents[1] / "data"


def test_sample_blocks_disjoint_and_deterministic():
    a = wavjepa.sample_blocks(200, seed=3)
    b = wavjepa.sample_blocks(200, seed=3)
    assert a == b
    targets = {i for blk in a["target_blocks"] for i in blk}
    assert not targets & set(a["context"])
    assert len(a["context"]) >= 20
    assert all(len(blk) == 10 for blk in a["target_blocks"])


def test_shared_sampling_mirrors_channels():
    s = wavjepa.sample_blocks_shared(100, 2, seed=1)
    ctx = set(s["context"])
    assert all((i + 100 in ctx) for i in ctx if i < 100)


def test_unknown_sampler_field_raises():
    with pytest.raises(wavjepa.Error):
        wavjepa.sample_blocks(200, seed=0, p_tagret=0.1)


def test_coverage_stats_near_reference():
    stats = wavjepa.coverage_stats(trials=2000, seed=5)
    assert 21.2 <= stats["target_percent"]["mean"] <= 24.2
    assert stats["overlap_violations"] == 0


def test_schedules():
    assert wavjepa.ema_tau(0) == 0.999
    assert abs(wavjepa.ema_tau(50_000) - 0.999495) < 1e-15
    assert wavjepa.ema_tau(500_000) == 0.99999
    assert wavjepa.lr_at(0) == 0.0
    assert wavjepa.lr_at(100_000) == 2e-4
    assert wavjepa.lr_at(375_000) == 0.0


def test_convolution_matches_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(300), rng.standard_normal(41)
    np.testing.assert_allclose(wavjepa.fft_convolve(a, b), np.convolve(a, b), atol=1e-10)
    np.testing.assert_allclose(wavjepa.direct_convolve(a, b), np.convolve(a, b), atol=1e-12)


def test_mix_scene_hits_requested_snr():
    rng = np.random.default_rng(1)
    src = np.sin(2 * np.pi * 440 * np.arange(16000) / 16000)
    brir = np.zeros((2, 200))
    brir[:, 0] = 1.0
    brir[:, 1:] = 0.1 * rng.standard_normal((2, 199)) * np.exp(-np.arange(1, 200) / 40)
    noise = 0.2 * rng.standard_normal(20000)
    mix, gain, snr = wavjepa.mix_scene(src, brir, [noise], [brir[::-1].copy()], 12.0)
    assert mix.shape == (2, 16000)
    clean = np.stack([np.convolve(src, brir[e])[:16000] for e in range(2)])
    residual = mix - clean
    measured = 20 * math.log10(np.sqrt(np.mean(clean**2)) / np.sqrt(np.mean(residual**2)))
    assert abs(measured - 12.0) < 0.01
    assert gain > 0 and abs(snr - 12.0) < 1e-9


def test_generalizability_score_from_table():
    s = wavjepa.generalizability_score(DATA / "hear_scores.csv", "WavJEPA-B-AudioSet")
    assert abs(s["score"] - 66.83) < 0.01
    assert len(s["tasks"]) == 11
    assert wavjepa.generalizability_score(DATA / "hear_scores.csv", "HEAR-Naive")["score"] == 0.0


def test_config_validation():
    cfg = wavjepa.config(profile="tiny")
    assert cfg["profile"] == "tiny"
    assert "tiny" in wavjepa.profile_names()
    with pytest.raises(wavjepa.Error, match="model.width"):
        wavjepa.config("[model]\nwidth = 15\n", profile="tiny")


def test_pretrain_is_deterministic():
    t = np.arange(32000) / 16000
    clips = [np.sin(2 * np.pi * f * t) + 0.1 * np.cos(7 * t) for f in (220, 330, 440, 660)]
    a = wavjepa.pretrain_losses(clips, steps=3, seed=2)
    b = wavjepa.pretrain_losses(clips, steps=3, seed=2)
    assert len(a) == 3 and a == b
    assert all(math.isfinite(v) for v in a)
