"""Model checkpoint files.

Layout (little-endian)::

    b"CVC1"
    32 bytes   sha256 spec hash (architecture + interpretation flags)
    u32        metadata length, then that many bytes of UTF-8 JSON
    tensors    CNT1 snapshots in this order:
               1. every parameter, in NetworkSpec.param_shapes() order
               2. every velocity buffer, same order (if metadata.has_velocity)
               3. the mean image (if metadata.has_mean_image)

The metadata holds the network spec, iteration counter, color space and
training config text, so a checkpoint is self-describing.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ShapeError
from .model import NetworkSpec, NetworkState
from .optim import OptimizerState
from .tensor import read_tensor, write_tensor

MAGIC = b"CVC1"


@dataclass
class Checkpoint:
    state: NetworkState
    optimizer: OptimizerState = None
    mean_image: np.ndarray = None
    color_space: str = "rgb"
    config_text: str = ""
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt):
    spec = ckpt.state.spec
    meta = {
        "spec": spec.to_dict(),
        "param_names": list(spec.param_shapes()),
        "iteration": ckpt.optimizer.iteration if ckpt.optimizer else 0,
        "has_velocity": ckpt.optimizer is not None,
        "has_mean_image": ckpt.mean_image is not None,
        "color_space": ckpt.color_space,
        "config": ckpt.config_text,
        "extra": ckpt.extra,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    # Write to a temp file first so an interrupted save never leaves a torn checkpoint.
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(spec.spec_hash())
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for name in meta["param_names"]:
                write_tensor(fh, ckpt.state.params[name])
            if ckpt.optimizer is not None:
                for name in meta["param_names"]:
                    write_tensor(fh, ckpt.optimizer.velocity[name])
            if ckpt.mean_image is not None:
                write_tensor(fh, np.asarray(ckpt.mean_image))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            return _read(fh)
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    except (ShapeError, ValueError, KeyError, TypeError, struct.error) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc


def _read(fh):
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    digest = fh.read(32)
    (length,) = struct.unpack("<I", fh.read(4))
    meta = json.loads(fh.read(length).decode("utf-8"))
    spec = NetworkSpec.from_dict(meta["spec"])
    if spec.spec_hash() != digest:
        raise CheckpointError("spec hash mismatch")
    shapes = spec.param_shapes()
    if list(shapes) != meta["param_names"]:
        raise CheckpointError("parameter list does not match the network spec")
    params = {}
    for name, shape in shapes.items():
        params[name] = read_tensor(fh)
        if params[name].shape != shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != {shape}")
    optimizer = None
    if meta["has_velocity"]:
        velocity = {name: read_tensor(fh) for name in shapes}
        optimizer = OptimizerState(velocity, int(meta["iteration"]))
    mean = read_tensor(fh) if meta["has_mean_image"] else None
    return Checkpoint(
        state=NetworkState(spec, params),
        optimizer=optimizer,
        mean_image=mean,
        color_space=meta["color_space"],
        config_text=meta["config"],
        extra=meta.get("extra", {}),
    )
