"""Checkpoint format, integrity errors, and bitwise resume."""

import struct

import numpy as np
import pytest

from vidprior import tensor as tt
from vidprior.net import UNet3D, UNetConfig
from vidprior.schedule import linear_schedule
from vidprior.train.checkpoint import (
    MAGIC,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from vidprior.train.data import SpriteDatasetConfig, make_dataset, stack_latents
from vidprior.train.loop import TrainConfig, Trainer, model_from_checkpoint

TINY = dict(base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,), head_channels=8,
            num_frames=9, groups=4, cond_embed_dim=16)


@pytest.fixture(autouse=True)
def _reset():
    tt.current_graph().reset()
    yield
    tt.current_graph().reset()


@pytest.fixture(scope="module")
def data():
    clips = make_dataset(SpriteDatasetConfig(clips_per_class=1))
    return stack_latents(clips), np.array([c.condition_id for c in clips])


def trainer(data, dtype="f64", mode="add-encdec-spade"):
    with tt.default_dtype(dtype):
        net = UNet3D(UNetConfig(injection_mode=mode, **TINY))
    return Trainer(net, linear_schedule(), TrainConfig(lr_temporal=1e-3, lr_spatial=1e-3, seed=3), *data,
                   extra={"note": "x"})


def test_save_load_save_is_byte_identical(data, tmp_path):
    tr = trainer(data)
    tr.run(2)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tr.save(str(p1))
    save_checkpoint(str(p2), load_checkpoint(str(p1)))
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().startswith(MAGIC)


def test_loaded_model_forward_is_bitwise(data, tmp_path):
    tr = trainer(data, dtype="f32")
    tr.run(1)
    p = tmp_path / "m.ckpt"
    tr.save(str(p))
    ckpt = load_checkpoint(str(p))
    model = model_from_checkpoint(ckpt)
    assert model.conv_out.spatial.weight.data.dtype == np.float32
    rng = np.random.default_rng(0)
    z, zc = rng.standard_normal((2, 9, 4, 16, 16)), rng.standard_normal((2, 4, 16, 16))
    with tt.no_grad():
        a = tr.model(z, [10, 700], zc, [1, 6]).data
        b = model(z, [10, 700], zc, [1, 6]).data
    assert np.array_equal(a, b)
    assert ckpt.step == 1 and ckpt.extra == {"note": "x"}
    assert ckpt.schedule == linear_schedule().params()
    assert ckpt.prior_lambda == 0.03


def test_corrupted_payload_byte_raises_checksum_error(data):
    raw = bytearray(to_bytes(trainer(data).checkpoint()))
    raw[len(raw) // 2] ^= 0x01
    with pytest.raises(CheckpointChecksumError):
        from_bytes(bytes(raw))


def test_truncated_file_raises_truncated_error(data):
    raw = to_bytes(trainer(data).checkpoint())
    for cut in (10, len(raw) // 3, len(raw) - 40):
        with pytest.raises(CheckpointTruncatedError):
            from_bytes(raw[:cut])


def test_version_mismatch_raises_version_error(data):
    raw = bytearray(to_bytes(trainer(data).checkpoint()))
    raw[8:12] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError):
        from_bytes(bytes(raw))


def test_bad_magic_and_trailing_bytes(data):
    raw = to_bytes(trainer(data).checkpoint())
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError):
        from_bytes(raw + b"\x00")


def test_error_classes_are_distinct():
    kinds = {CheckpointChecksumError, CheckpointTruncatedError, CheckpointVersionError}
    for k in kinds:
        assert issubclass(k, CheckpointError)
        assert all(not issubclass(k, o) for o in kinds - {k})


@pytest.mark.parametrize("dtype", ["f64", "f32"])
def test_resume_matches_uninterrupted_training_bitwise(data, tmp_path, dtype):
    straight = trainer(data, dtype)
    straight.run(10)

    first = trainer(data, dtype)
    first.run(4)
    p = tmp_path / "mid.ckpt"
    first.save(str(p))
    resumed = Trainer.resume(str(p), *data)
    resumed.run(6)

    assert resumed.step_count == 10
    assert straight.losses[4:] == resumed.losses
    a, b = dict(straight.model.named_parameters()), dict(resumed.model.named_parameters())
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert np.array_equal(straight.rng.bit_generator.state["state"]["counter"],
                          resumed.rng.bit_generator.state["state"]["counter"])


def test_resume_restores_optimizer_moments(data, tmp_path):
    tr = trainer(data, mode="add-dec")
    tr.run(2)
    p = tmp_path / "o.ckpt"
    tr.save(str(p))
    back = Trainer.resume(str(p), *data)
    assert back.optimizer.t == tr.optimizer.t == 2
    for k in tr.optimizer.m:
        assert np.array_equal(tr.optimizer.m[k], back.optimizer.m[k])
        assert np.array_equal(tr.optimizer.v[k], back.optimizer.v[k])
