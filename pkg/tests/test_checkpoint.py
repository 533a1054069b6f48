import numpy as np
import pytest

from crossdrive.rl import (ENDTOEND, SPEEDREF, GaussianPolicy,
                           load_checkpoint, save_checkpoint)
from crossdrive.rl.checkpoint import FORMAT_VERSION, MAGIC


def test_round_trip_preserves_mode_and_shapes(tmp_path):
    pol = GaussianPolicy(86, SPEEDREF, seed=4)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, pol)
    back = load_checkpoint(path)
    assert back.mode == SPEEDREF
    assert back.trunk.sizes == pol.trunk.sizes
    assert back.value_net.sizes == pol.value_net.sizes


def test_round_trip_parameters_to_float32_precision(tmp_path):
    pol = GaussianPolicy(12, ENDTOEND, hidden=(16, 8), seed=7)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, pol)
    back = load_checkpoint(path)
    for a, b in zip(pol.params(), back.params()):
        assert np.allclose(a, b, rtol=1e-6, atol=1e-7)


def test_save_load_save_is_byte_identical(tmp_path):
    # float32 quantization is idempotent, so a second pass changes nothing.
    pol = GaussianPolicy(10, SPEEDREF, hidden=(8, 8), seed=1)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, pol)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTAPOLICY" + b"\x00" * 64)
    with pytest.raises(ValueError, match="not a policy checkpoint"):
        load_checkpoint(path)


def test_rejects_unknown_version(tmp_path):
    pol = GaussianPolicy(4, SPEEDREF, hidden=(4, 4), seed=0)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, pol)
    data = bytearray(path.read_bytes())
    data[len(MAGIC)] = FORMAT_VERSION + 1
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_rejects_truncated_payload(tmp_path):
    pol = GaussianPolicy(4, SPEEDREF, hidden=(4, 4), seed=0)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, pol)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)


def test_rejects_trailing_bytes(tmp_path):
    pol = GaussianPolicy(4, SPEEDREF, hidden=(4, 4), seed=0)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, pol)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(path)
