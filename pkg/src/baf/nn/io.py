"""BAFNET1 network container: layer specs plus float64 parameters, round-trip exact."""

from __future__ import annotations

from ..artifacts import floats_from_bytes, floats_to_bytes, read_container, write_container
from ..errors import FormatError
from .layers import Network

NET_MAGIC = "BAFNET1"


def save_network(path, net: Network) -> None:
    params = net.parameters()
    order = net.param_ids()
    header = {
        "layers": net.specs(),
        "params": [[pid, list(params[pid].shape)] for pid in order],
    }
    payload = b"".join(floats_to_bytes(params[pid]) for pid in order)
    write_container(path, NET_MAGIC, header, payload)


def load_network(path) -> Network:
    header, payload = read_container(path, NET_MAGIC)
    net = Network.from_specs(header["layers"])
    offset = 0
    for pid, shape in header["params"]:
        arr, offset = floats_from_bytes(payload, tuple(shape), offset)
        net.set_parameter(pid, arr)
    if offset != len(payload):
        raise FormatError(f"{path}: trailing bytes in parameter payload")
    return net
