"""Image, dataset, checkpoint and manifest I/O."""

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ._validation import ValidationError

__all__ = [
    "read_png",
    "write_png",
    "write_json_atomic",
    "dataset_paths",
    "save_checkpoint",
    "load_checkpoint",
    "file_sha256",
    "state_hash",
]


def read_png(path):
    """Read an 8- or 16-bit PNG as a (C, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        img = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.uint16:
        img = arr.astype(np.float64) / 65535.0
    else:
        if mode not in ("L", "RGB"):
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"))
        img = arr.astype(np.float64) / 255.0
    if img.ndim == 2:
        img = img[None]
    else:
        img = img.transpose(2, 0, 1)
    return np.ascontiguousarray(img)


def write_png(path, img, bits=8):
    """Write a (C, H, W) array in [0, 1] as PNG; 16-bit output supports one channel only."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2:
        img = img[None]
    if bits == 8:
        u = np.round(img * 255).astype(np.uint8)
        pil = Image.fromarray(u[0] if len(u) == 1 else u.transpose(1, 2, 0))
    elif bits == 16:
        if len(img) != 1:
            raise ValidationError("16-bit PNG output is limited to single-channel images")
        pil = Image.fromarray(np.round(img[0] * 65535).astype(np.uint16))
    else:
        raise ValidationError("bits must be 8 or 16")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def write_json_atomic(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, path)


def dataset_paths(root):
    root = Path(root)
    return {"hr": root / "hr", "lr": root / "lr", "meta": root / "meta"}


def read_dataset_meta(root):
    meta = {}
    for path in sorted(dataset_paths(root)["meta"].glob("*.jsonl")):
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                meta[rec["name"]] = rec
    return meta


def save_checkpoint(path, model, extra=None):
    """Single archive: state dict keyed by module path, recorded shapes, model config."""
    state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    payload = {
        "format": "realosr-checkpoint-v1",
        "config": dict(model.config),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "state": state,
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, variant=None):
    from .denoiser import RealOSRNet

    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != "realosr-checkpoint-v1":
        raise ValidationError(f"{path} is not a realosr checkpoint")
    config = payload["config"]
    if variant is not None and config["variant"] != variant:
        raise ValidationError(
            f"checkpoint was trained for variant {config['variant']!r}, not {variant!r}")
    model = RealOSRNet(**config)
    for k, shape in payload["shapes"].items():
        if list(payload["state"][k].shape) != shape:
            raise ValidationError(f"checkpoint tensor {k} does not match its recorded shape")
    model.load_state_dict(payload["state"])
    return model, payload.get("extra", {})


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def state_hash(tensors):
    """Hash of a name -> tensor mapping (order-independent)."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
