"""Self-describing checkpoint container.

A checkpoint is a zip archive holding a JSON manifest plus one raw
little-endian blob per tensor, each with a recorded shape, dtype and SHA-256.
Two kinds share the format: "resume" (weights + optimizer moments) and
"weights" (serving). Loading never needs external config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .errors import CorruptFile, IncompatibleConfig, VersionMismatch
from .networks import Networks, Segmenter, build_networks

FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64,
           "int32": np.int32, "uint8": np.uint8}


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    arr = t.detach().cpu().contiguous().numpy()
    dtype = str(arr.dtype)
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported tensor dtype {dtype}")
    return arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C"), dtype


def _flatten_optimizer(name: str, state: dict) -> tuple[dict, dict]:
    """Split an optimizer state_dict into tensor blobs and a JSON-safe skeleton."""
    blobs = {}
    skeleton = {"param_groups": state["param_groups"], "state_keys": {}}
    for idx, entry in state["state"].items():
        keys = {}
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                blob_name = f"opt.{name}.{idx}.{key}"
                blobs[blob_name] = value
                keys[key] = {"blob": blob_name}
            else:
                keys[key] = {"value": value}
        skeleton["state_keys"][str(idx)] = keys
    return blobs, skeleton


def save_checkpoint(path: str | Path, networks: dict, kind: str, metadata: dict,
                    model_config: ModelConfig, optimizers: dict | None = None) -> Path:
    """Write networks (and optionally optimizer states) to a checkpoint file.

    networks maps names ("G", "F", "E", "S", "D") to nn.Modules; tensors are
    recorded under `<name>.<state_dict key>`.
    """
    if kind not in ("weights", "resume"):
        raise ValueError(f"kind must be weights or resume, got {kind!r}")
    path = Path(path)
    tensors: dict[str, torch.Tensor] = {}
    for net_name, net in networks.items():
        state = net.state_dict() if hasattr(net, "state_dict") else net
        for key, value in state.items():
            tensors[f"{net_name}.{key}"] = value
    opt_skeletons = {}
    if optimizers is not None:
        if kind != "resume":
            raise ValueError("optimizer states belong in resume checkpoints only")
        for opt_name, opt in optimizers.items():
            blobs, skeleton = _flatten_optimizer(opt_name, opt.state_dict())
            tensors.update(blobs)
            opt_skeletons[opt_name] = skeleton

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "metadata": {**metadata, "created_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
        "model": dataclasses.asdict(model_config),
        "networks": sorted(networks),
        "optimizers": opt_skeletons,
        "tensors": {},
    }
    payload = {}
    for i, name in enumerate(sorted(tensors)):
        raw, dtype = _tensor_bytes(tensors[name])
        file_name = f"tensors/{i:06d}.bin"
        manifest["tensors"][name] = {
            "file": file_name,
            "shape": list(tensors[name].shape),
            "dtype": dtype,
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
        payload[file_name] = raw

    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        stamp = (1980, 1, 1, 0, 0, 0)  # fixed entry timestamps, content-addressed anyway
        zf.writestr(zipfile.ZipInfo("manifest.json", date_time=stamp),
                    json.dumps(manifest, sort_keys=True, separators=(",", ":")))
        for file_name in sorted(payload):
            zf.writestr(zipfile.ZipInfo(file_name, date_time=stamp), payload[file_name])
    return path


@dataclass
class LoadedCheckpoint:
    kind: str
    metadata: dict
    model_config: ModelConfig
    net_states: dict      # name -> state_dict of tensors
    optimizer_states: dict  # name -> torch optimizer state_dict, empty for weights kind

    @property
    def iteration(self) -> int:
        return int(self.metadata.get("iteration", 0))


def load_checkpoint(path: str | Path, expected_model: ModelConfig | None = None) -> LoadedCheckpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except KeyError as exc:
                raise CorruptFile(f"{path}: missing manifest") from exc
            version = manifest.get("format_version")
            if version != FORMAT_VERSION:
                raise VersionMismatch(f"{path}: format version {version}, "
                                      f"supported {FORMAT_VERSION}")
            tensors = {}
            for name, info in manifest["tensors"].items():
                try:
                    raw = zf.read(info["file"])
                except KeyError as exc:
                    raise CorruptFile(f"{path}: missing blob for {name}") from exc
                if hashlib.sha256(raw).hexdigest() != info["sha256"]:
                    raise CorruptFile(f"{path}: checksum mismatch for {name}")
                arr = np.frombuffer(raw, dtype=np.dtype(_DTYPES[info["dtype"]]).newbyteorder("<"))
                tensors[name] = torch.from_numpy(
                    arr.astype(_DTYPES[info["dtype"]]).reshape(info["shape"]).copy())
    except zipfile.BadZipFile as exc:
        raise CorruptFile(f"{path}: not a valid checkpoint archive") from exc

    model_config = ModelConfig(**manifest["model"])
    if expected_model is not None and model_config != expected_model:
        raise IncompatibleConfig(f"{path}: checkpoint built for {model_config}, "
                                 f"expected {expected_model}")

    net_states: dict[str, dict] = {name: {} for name in manifest["networks"]}
    for full_name, tensor in tensors.items():
        prefix, _, key = full_name.partition(".")
        if prefix in net_states:
            net_states[prefix][key] = tensor

    optimizer_states = {}
    for opt_name, skeleton in manifest.get("optimizers", {}).items():
        state = {}
        for idx, keys in skeleton["state_keys"].items():
            entry = {}
            for key, ref in keys.items():
                entry[key] = tensors[ref["blob"]] if "blob" in ref else ref["value"]
            state[int(idx)] = entry
        optimizer_states[opt_name] = {"state": state,
                                      "param_groups": skeleton["param_groups"]}

    return LoadedCheckpoint(kind=manifest["kind"], metadata=manifest["metadata"],
                            model_config=model_config, net_states=net_states,
                            optimizer_states=optimizer_states)


def restore_networks(ckpt: LoadedCheckpoint) -> Networks:
    """Rebuild the full five-network set from a checkpoint."""
    missing = {"G", "F", "E", "S", "D"} - set(ckpt.net_states)
    if missing:
        raise IncompatibleConfig(f"checkpoint lacks networks: {sorted(missing)}")
    nets = build_networks(ckpt.model_config)
    for name, net in nets.as_dict().items():
        net.load_state_dict(ckpt.net_states[name])
    return nets


def restore_segmenter(ckpt: LoadedCheckpoint) -> Segmenter:
    if "S" not in ckpt.net_states:
        raise IncompatibleConfig("checkpoint has no segmenter weights")
    seg = Segmenter(ckpt.model_config)
    seg.load_state_dict(ckpt.net_states["S"])
    return seg


def segmenter_checksum(seg: Segmenter) -> str:
    """SHA-256 over the segmenter's parameters; the frozen-S invariant witness."""
    digest = hashlib.sha256()
    for key in sorted(seg.state_dict()):
        raw, _ = _tensor_bytes(seg.state_dict()[key])
        digest.update(key.encode())
        digest.update(raw)
    return digest.hexdigest()
