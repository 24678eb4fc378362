"""Checkpoint container.

Byte layout (all integers little-endian)::

    magic      4 bytes   b"DRCK"
    version    u32       FORMAT_VERSION
    length     u32       byte length of the manifest
    manifest   UTF-8 JSON, keys sorted:
               {"model": <ModelConfig>, "layers": [<layer config>...],
                "params": [[name, [dims...]], ...]}
    payload    float64 little-endian arrays, C order, in manifest order

Saving the same network twice yields identical bytes.
"""
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, VersionError
from .config import ModelConfig
from .network import Network

MAGIC = b"DRCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")
_PAYLOAD_DTYPE = np.dtype("<f8")


def checkpoint_bytes(network):
    for layer in network.drconv_layers():
        if layer.frozen_filters is not None:
            raise ConfigError(f"{layer.name}.frozen_filters", "frozen filter banks cannot be checkpointed")
    params = network.parameters()
    manifest = {
        "model": network.config.to_dict(),
        "layers": [layer.config() for layer in network.layers],
        "params": [[key, list(value.shape)] for key, value in params.items()],
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(text)), text]
    chunks.extend(np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE).tobytes() for value in params.values())
    return b"".join(chunks)


def save_checkpoint(network, path):
    Path(path).write_bytes(checkpoint_bytes(network))


def _parse_manifest(data, path):
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads {FORMAT_VERSION}")
    end = _HEADER.size + length
    if len(data) < end:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[_HEADER.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or not {"model", "layers", "params"} <= set(manifest):
        raise FormatError(f"{path}: manifest lacks model, layers or params")
    return manifest, end


def load_checkpoint_bytes(data, path="<bytes>"):
    manifest, offset = _parse_manifest(data, path)
    try:
        config = ModelConfig.from_dict(manifest["model"])
        network = Network.from_manifest(config, manifest["layers"])
    except (ConfigError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: manifest does not describe a valid model: {exc}") from exc
    params = network.parameters()
    names = [entry[0] for entry in manifest["params"]]
    if names != list(params):
        raise FormatError(f"{path}: parameter list does not match the model")
    state = {}
    for name, dims in manifest["params"]:
        target = params[name]
        if tuple(dims) != target.shape:
            raise FormatError(f"{path}: {name} has shape {tuple(dims)}, model expects {target.shape}")
        nbytes = target.size * _PAYLOAD_DTYPE.itemsize
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: payload truncated at {name}")
        state[name] = np.frombuffer(data, dtype=_PAYLOAD_DTYPE, count=target.size, offset=offset).reshape(target.shape)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    network.load_state(state)
    return network


def load_checkpoint(path):
    return load_checkpoint_bytes(Path(path).read_bytes(), path)
