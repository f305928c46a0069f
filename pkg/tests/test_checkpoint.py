import numpy as np
import pytest

from stochsec.autodiff import Dense, NetworkSpec, SqueezeSum, build_network, parameter_names
from stochsec.checkpoint import (
    CheckpointError,
    load_params,
    load_tensors,
    save_params,
    save_tensors,
)


def test_round_trip_preserves_values_and_order(tmp_path):
    path = tmp_path / "t.ckpt"
    tensors = {
        "w": np.arange(6, dtype=np.float64).reshape(2, 3),
        "b": np.array([1.5]),
        "scalar": np.array(3.25),
    }
    save_tensors(path, tensors)
    back = load_tensors(path)
    assert list(back) == ["w", "b", "scalar"]
    for name in tensors:
        assert back[name].shape == tensors[name].shape
        assert np.array_equal(back[name], tensors[name])


def test_header_layout(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"x": np.array([2.0])})
    raw = path.read_bytes()
    assert raw[:4] == b"EBLB"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 1  # len("x")
    assert raw[12:13] == b"x"
    assert int.from_bytes(raw[13:17], "little") == 1  # rank
    assert int.from_bytes(raw[17:25], "little") == 1  # extent
    assert np.frombuffer(raw[25:], dtype="<f8")[0] == 2.0


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": np.zeros((4, 4))})
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_tensors(path)


def test_network_params_round_trip(tmp_path):
    spec = NetworkSpec(input_shape=(3,), layers=(Dense(3, 2), Dense(2, 1), SqueezeSum()))
    params = build_network(spec, seed=4)
    path = tmp_path / "net.ckpt"
    save_params(path, parameter_names(spec), params)
    back = load_params(path, parameter_names(spec))
    for a, b in zip(params, back):
        assert np.array_equal(a, b)


def test_missing_tensor_reported(tmp_path):
    path = tmp_path / "net.ckpt"
    save_tensors(path, {"layer0.weight": np.zeros((2, 3))})
    with pytest.raises(CheckpointError, match="layer0.bias"):
        load_params(path, ["layer0.weight", "layer0.bias"])
