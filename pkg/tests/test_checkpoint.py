import numpy as np
import pytest

from trajdiffuse.denoiser import (
    ArchDescriptor,
    BadMagicError,
    DescriptorMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from trajdiffuse.schedule import build_cosine_schedule

DESC = ArchDescriptor(
    widths=(4, 6), kernel_len=3, gn_groups=2, emb_dim=4,
    t_obs=4, t_pred=4, n_steps=8, coord_scale=2.5,
)


def f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@pytest.fixture()
def saved(tmp_path):
    params = init_params(DESC, seed=0)
    schedule = build_cosine_schedule(DESC.n_steps)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, schedule, path)
    return params, schedule, path


def test_round_trip_is_bit_exact_for_representable_tensors(saved):
    params, schedule, path = saved
    loaded, loaded_sched = load_checkpoint(path)
    assert set(loaded.tensors) == set(params.tensors)
    for name, t in params.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[name], t)
    assert loaded.arch == params.arch
    # schedule vectors come back at f32 precision
    np.testing.assert_array_equal(loaded_sched.alphas, f32(schedule.alphas))
    np.testing.assert_array_equal(loaded_sched.alpha_bars, f32(schedule.alpha_bars))
    assert loaded_sched.posterior_vars[0] == 0.0


def test_save_load_save_is_byte_stable(saved, tmp_path):
    params, schedule, path = saved
    loaded, loaded_sched = load_checkpoint(path)
    path2 = tmp_path / "again.ckpt"
    save_checkpoint(loaded, loaded_sched, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_truncated_file_reports_truncation(saved):
    _, _, path = saved
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_bad_magic_is_reported(saved):
    _, _, path = saved
    data = path.read_bytes()
    path.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_version_mismatch_is_reported(saved):
    _, _, path = saved
    data = bytearray(path.read_bytes())
    data[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)


def test_shape_descriptor_inconsistency_is_reported(saved, tmp_path):
    params, schedule, _ = saved
    params.tensors["out.b"] = np.zeros(3)  # descriptor implies 2 channels
    bad = tmp_path / "bad.ckpt"
    save_checkpoint(params, schedule, bad)
    with pytest.raises(DescriptorMismatchError):
        load_checkpoint(bad)


def test_schedule_descriptor_step_mismatch_rejected(tmp_path):
    params = init_params(DESC, seed=1)
    schedule = build_cosine_schedule(DESC.n_steps + 1)
    with pytest.raises(ValueError):
        save_checkpoint(params, schedule, tmp_path / "x.ckpt")
