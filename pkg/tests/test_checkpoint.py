import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from hypervib.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                  elements=st.floats(allow_nan=False, width=64)))
def test_round_trip_is_bit_exact(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("ck") / "a.ckpt"
    save_checkpoint(p, {"x": arr, "y.W": np.ones((2, 0))}, {"k": [1, 2]})
    tensors, meta = load_checkpoint(p)
    assert meta == {"k": [1, 2]}
    assert tensors["x"].shape == arr.shape and tensors["y.W"].shape == (2, 0)
    assert tensors["x"].tobytes() == arr.tobytes()


def test_order_and_special_values(tmp_path):
    arr = np.array([np.inf, -0.0, 5e-324, 1 / 3])
    save_checkpoint(tmp_path / "c", {"b": arr, "a": np.zeros(1)})
    tensors, _ = load_checkpoint(tmp_path / "c")
    assert list(tensors) == ["b", "a"]
    assert tensors["b"].tobytes() == arr.tobytes()


def test_errors(tmp_path):
    p = tmp_path / "c"
    with pytest.raises(CheckpointError):
        save_checkpoint(p, {"bad name": np.zeros(1)})
    save_checkpoint(p, {"a": np.zeros((2, 2))})
    good = p.read_text()
    cases = {
        "magic": good.replace("hypervib-checkpoint", "other", 1),
        "version": good.replace("hypervib-checkpoint 1", "hypervib-checkpoint 9", 1),
        "meta": good.replace("meta", "data", 1),
        "count": good.replace("tensor a 2 2 2", "tensor a 2 2 3"),
        "ndim": good.replace("tensor a 2 2 2", "tensor a 3 2 2"),
        "end": good.replace("end\n", ""),
    }
    for name, text in cases.items():
        p.write_text(text)
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
