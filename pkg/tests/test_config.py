"""Flat key = value run configuration."""

import pytest

from vidprior.config import ConfigError, RunConfig, format_config, load_config, parse_config


def test_defaults_map_to_component_configs():
    cfg = RunConfig()
    u = cfg.unet()
    assert u.injection_mode == "add-encdec-spade" and u.num_frames == 9 and u.output_skip
    t = cfg.train(4)
    assert t.seed == 4 and t.lr_spatial == pytest.approx(t.lr_temporal / 10)
    assert cfg.schedule().params() == {"num_timesteps": 1000, "beta_start": 0.00085, "beta_end": 0.012,
                                       "schedule_kind": "linear"}
    s = cfg.sampler(7)
    assert s.seed == 7 and s.prior.lam == 0.03 and s.prior.gamma == 0.02
    assert cfg.dataset().frames == 9


def test_parse_types_comments_and_blank_lines():
    text = """
    # toy run
    base_channels = 8      # narrower
    channel_multipliers = 1, 2
    spade_clip_norm = yes
    lr_temporal = 1e-3
    injection_mode = add-dec
    """
    cfg = parse_config(text)
    assert cfg.base_channels == 8
    assert cfg.channel_multipliers == (1, 2)
    assert cfg.spade_clip_norm is True
    assert cfg.lr_temporal == 1e-3
    assert cfg.injection_mode == "add-dec"


def test_explicit_spatial_rate():
    assert parse_config("lr_spatial = 0.002").train(0).lr_spatial == 0.002


@pytest.mark.parametrize("text,match", [
    ("bogus = 1", "unknown key"),
    ("steps = ten", "cannot parse"),
    ("ema = maybe", "cannot parse"),
    ("steps 10", "key = value"),
    ("steps = 1\nsteps = 2", "already set"),
])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_format_round_trip(tmp_path):
    cfg = parse_config("base_channels = 8\nchannel_multipliers = 1,2\nema = false\nmode = tsr")
    p = tmp_path / "run.cfg"
    p.write_text(format_config(cfg), encoding="utf-8")
    assert load_config(str(p)) == cfg


def test_load_without_path_gives_defaults():
    assert load_config(None) == RunConfig()


def test_tsr_dataset_renders_base_rate_trajectories():
    cfg = parse_config("mode = tsr\nnum_frames = 5")
    assert cfg.dataset().frames == 9
    assert cfg.train(0).cond_drop_rate == 1.0
