import numpy as np
import pytest

from baf.errors import FormatError
from baf.nn import Activation, Conv2D, Dense, MaxPool2x2, Network, Upsample2x, load_network, save_network


def test_network_roundtrip_is_bit_identical(tmp_path):
    net = Network([
        Conv2D(1, 4), Activation("relu"), MaxPool2x2(),
        Dense(4 * 2 * 2, 8), Activation("tanh"),
        Dense(8, 4, out_shape=(2, 2, 1)), Upsample2x(),
    ])
    net.init_params(np.random.default_rng(21))
    path = tmp_path / "net.bafnet"
    save_network(path, net)
    loaded = load_network(path)

    assert loaded.param_ids() == net.param_ids()
    for pid, p in net.parameters().items():
        assert np.array_equal(loaded.parameters()[pid], p)

    x = np.random.default_rng(22).standard_normal((2, 4, 4, 1))
    ya, _ = net.forward(x)
    yb, _ = loaded.forward(x)
    assert np.array_equal(ya, yb)


def test_double_save_is_byte_identical(tmp_path):
    net = Network([Dense(3, 2)])
    net.init_params(np.random.default_rng(5))
    p1, p2 = tmp_path / "a.bafnet", tmp_path / "b.bafnet"
    save_network(p1, net)
    save_network(p2, net)
    assert p1.read_bytes() == p2.read_bytes()


def test_unknown_magic_is_rejected(tmp_path):
    path = tmp_path / "bogus.bafnet"
    path.write_bytes(b"BAFXX9\n" + b"\x00" * 16)
    with pytest.raises(FormatError, match="unknown artifact version"):
        load_network(path)


def test_truncated_payload_is_rejected(tmp_path):
    net = Network([Dense(3, 2)])
    net.init_params(np.random.default_rng(5))
    path = tmp_path / "net.bafnet"
    save_network(path, net)
    clipped = path.read_bytes()[:-8]
    path.write_bytes(clipped)
    with pytest.raises(FormatError, match="truncated"):
        load_network(path)
