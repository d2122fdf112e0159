"""End-to-end CLI: data, train, resume, sample, interpolate, eval, verify."""

import os

import numpy as np
import pytest

from vidprior.cli import main
from vidprior.tensor import atns
from vidprior.train.checkpoint import load_checkpoint

TOY = """\
base_channels = 8
channel_multipliers = 1, 2
attention_levels = 1
head_channels = 8
groups = 4
cond_embed_dim = 16
clips_per_class = 1
lr_temporal = 1e-3
lr_spatial = 1e-3
steps = 4
sample_steps = 2
guidance_scale = 2.0
eval_clips_per_class = 1
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "toy.cfg"
    cfg.write_text(TOY, encoding="utf-8")
    tsr = root / "tsr.cfg"
    tsr.write_text(TOY + "mode = tsr\nnum_frames = 5\n", encoding="utf-8")
    assert main(["--config", str(cfg), "make-data", "--out", str(root / "data")]) == 0
    assert main(["--config", str(cfg), "train", "--data", str(root / "data"), "--out", str(root / "m.ckpt")]) == 0
    return root, str(cfg), str(tsr)


def test_make_data_writes_manifest(work, capsys):
    root, _, _ = work
    lines = (root / "data" / "manifest.txt").read_text().splitlines()
    assert len(lines) == 6
    assert lines[0].split() == ["clip_00000.atns", "0", "2"]
    assert atns.load(str(root / "data" / "clip_00000.atns")).shape == (9, 4, 16, 16)


def test_make_data_is_deterministic(work, tmp_path):
    root, cfg, _ = work
    main(["--config", cfg, "make-data", "--out", str(tmp_path / "again")])
    for name in os.listdir(root / "data"):
        assert (root / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_train_then_resume_matches_straight_run(work, tmp_path):
    root, cfg, _ = work
    half = str(tmp_path / "half.ckpt")
    assert main(["--config", cfg, "train", "--data", str(root / "data"), "--out", half, "--steps", "2"]) == 0
    full = str(tmp_path / "resumed.ckpt")
    assert main(["--config", cfg, "train", "--data", str(root / "data"), "--out", full, "--resume", half]) == 0
    a, b = load_checkpoint(str(root / "m.ckpt")), load_checkpoint(full)
    assert a.step == b.step == 4
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert str(a.rng_state) == str(b.rng_state)
    opt_a, opt_b = a.optimizer["arrays"], b.optimizer["arrays"]
    assert all(np.array_equal(opt_a[k], opt_b[k]) for k in opt_a)


def _center(root):
    path = root / "center.atns"
    if not path.exists():
        atns.save(str(path), atns.load(str(root / "data" / "clip_00000.atns"))[4])
    return str(path)


def test_sample_is_bitwise_stable(work, tmp_path):
    root, cfg, _ = work
    outs = []
    for k, seed in enumerate(("5", "5", "6")):
        out = tmp_path / f"s{k}"
        assert main(["--seed", seed, "--config", cfg, "sample", "--checkpoint", str(root / "m.ckpt"),
                     "--center-frame", _center(root), "--cond", "1", "--out", str(out)]) == 0
        outs.append((out / "sample.atns").read_bytes())
        assert len(os.listdir(out / "frames")) == 9
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


def test_sample_f64_precision(work, tmp_path):
    root, cfg, _ = work
    assert main(["--precision", "f64", "--config", cfg, "sample", "--checkpoint", str(root / "m.ckpt"),
                 "--center-frame", _center(root), "--cond", "6", "--prior-lambda", "0", "--prior-gamma", "0",
                 "--out", str(tmp_path)]) == 0
    assert atns.load(str(tmp_path / "sample.atns")).dtype == np.float64


def test_interpolate_with_tsr_model(work, tmp_path):
    root, _, tsr = work
    assert main(["--config", tsr, "make-data", "--out", str(tmp_path / "d")]) == 0
    assert atns.load(str(tmp_path / "d" / "clip_00000.atns")).shape == (5, 4, 16, 16)
    ck = str(tmp_path / "t.ckpt")
    assert main(["--config", tsr, "train", "--data", str(tmp_path / "d"), "--out", ck, "--steps", "2"]) == 0
    first = atns.load(str(tmp_path / "d" / "clip_00000.atns"))
    atns.save(str(tmp_path / "a.atns"), first[0])
    atns.save(str(tmp_path / "b.atns"), first[-1])
    assert main(["--config", tsr, "interpolate", "--checkpoint", ck, "--first", str(tmp_path / "a.atns"),
                 "--last", str(tmp_path / "b.atns"), "--out", str(tmp_path / "o")]) == 0
    assert atns.load(str(tmp_path / "o" / "interpolated.atns")).shape == (5, 4, 16, 16)


def test_eval_report_is_reproducible(work, tmp_path, capsys):
    root, cfg, _ = work
    reports = []
    for k in range(2):
        out = tmp_path / f"e{k}"
        assert main(["--config", cfg, "eval", "--checkpoint", str(root / "m.ckpt"), "--data", str(root / "data"),
                     "--out", str(out)]) == 0
        reports.append((out / "report.txt").read_bytes())
    assert reports[0] == reports[1]
    text = reports[0].decode()
    for key in ("frechet_proxy", "temporal_consistency_generated", "center_mse", "checkpoint_step"):
        assert f"{key} = " in text
    assert "frechet_proxy = " in capsys.readouterr().out
    assert len(os.listdir(tmp_path / "e0" / "frames")) == 6 * 9


def test_verify_schedule_suite(capsys):
    assert main(["verify", "schedule"]) == 0
    out = capsys.readouterr().out
    assert "PASS schedule." in out and out.rstrip().endswith("RESULT PASS")


def test_verify_unknown_suite_is_an_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "nonsense"])
    assert exc.value.code == 2


def test_missing_files_and_bad_config(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["--config", str(bad), "verify", "schedule"]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "absent.cfg"), "verify", "schedule"]) == 2
