"""Versioned checkpoint: ``DSQA0001`` magic, u32 header length, JSON header, f32 tensors.

Tensors are stored little-endian in header order and widened to float64 on load,
so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule
from .errors import UnsupportedFormat
from .features import FeatureConfig
from .network import DenoiserParams, NetworkArch

MAGIC = b"DSQA0001"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: DenoiserParams
    schedule: NoiseSchedule
    features: FeatureConfig
    patch_frames: int


def _header(ckpt: Checkpoint) -> dict:
    p = ckpt.params
    tensors = []
    for i, (w, b) in enumerate(p.weights):
        tensors.append({"name": f"layers.{i}.weight", "shape": list(w.shape)})
        tensors.append({"name": f"layers.{i}.bias", "shape": list(b.shape)})
    s = ckpt.schedule
    return {
        "format_version": FORMAT_VERSION,
        "arch": {"in_dim": p.arch.in_dim, "hidden_dims": list(p.arch.hidden_dims),
                 "embed_dim": p.arch.embed_dim, "activation": "silu"},
        "sigma_data": p.sigma_data,
        "schedule": {"sigma_min": s.sigma_min, "sigma_max": s.sigma_max, "rho": s.rho, "num_steps": s.num_steps},
        "features": {**ckpt.features.to_dict(), "patch_frames": ckpt.patch_frames},
        "norm": {"mean": p.feature_mean, "std": p.feature_std},
        "tensors": tensors,
    }


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(a.astype("<f4").tobytes() for w, b in ckpt.params.weights for a in (w, b))
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise UnsupportedFormat("not a DSQA0001 checkpoint")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UnsupportedFormat(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise UnsupportedFormat(f"unsupported checkpoint format_version {header.get('format_version')!r}")
    payload = blob[12 + hlen:]
    expected = sum(4 * int(np.prod(t["shape"])) for t in header["tensors"])
    if len(payload) != expected:
        raise UnsupportedFormat(f"checkpoint payload is {len(payload)} bytes, header implies {expected}")
    arrays, offset = [], 0
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        a = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays.append(a.astype(np.float64).reshape(t["shape"]))
        offset += 4 * count
    a = header["arch"]
    arch = NetworkArch(a["in_dim"], tuple(a["hidden_dims"]), a["embed_dim"])
    weights = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
    params = DenoiserParams(arch, weights, header["sigma_data"], header["norm"]["mean"], header["norm"]["std"])
    feats = dict(header["features"])
    patch_frames = feats.pop("patch_frames")
    return Checkpoint(params, NoiseSchedule(**header["schedule"]), FeatureConfig(**feats), patch_frames)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
