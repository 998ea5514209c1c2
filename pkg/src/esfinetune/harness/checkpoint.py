"""Binary policy checkpoints.

Layout (all integers little-endian)::

    b"EVPC1"                 magic
    uint16                   format version
    uint32                   header length in bytes
    header                   UTF-8 JSON: architecture, action scale, policy
                             kind, parameter count, SHA-256 of the parameter
                             block, metadata
    float64[n_params]        parameters, little-endian
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from esfinetune import __version__
from esfinetune.nn import MlpArchitecture
from esfinetune.policy import Policy, PolicyKind

MAGIC = b"EVPC1"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<5sHI")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    policy: Policy
    system: str
    seed: int
    phase: str  # "rl" or "evolved"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phase not in ("rl", "evolved"):
            raise CheckpointError(f"unknown phase {self.phase!r}")


def to_bytes(ckpt: Checkpoint) -> bytes:
    params = np.ascontiguousarray(ckpt.policy.params, dtype="<f8")
    block = params.tobytes()
    header = {
        "architecture": ckpt.policy.arch.to_dict(),
        "action_scale": float(ckpt.policy.action_scale),
        "policy_kind": ckpt.policy.kind.value,
        "n_params": int(params.size),
        "sha256": hashlib.sha256(block).hexdigest(),
        "system": ckpt.system,
        "seed": int(ckpt.seed),
        "phase": ckpt.phase,
        "created_by": f"esfinetune {__version__}",
        "metadata": ckpt.metadata,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(raw)) + raw + block


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, n_header = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("bad magic: not a policy checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + n_header].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    block = data[start + n_header :]
    arch = MlpArchitecture.from_dict(header["architecture"])
    if header["n_params"] != arch.n_params or len(block) != 8 * arch.n_params:
        raise CheckpointError("parameter block length does not match the architecture")
    if hashlib.sha256(block).hexdigest() != header["sha256"]:
        raise CheckpointError("parameter checksum mismatch")
    params = np.frombuffer(block, dtype="<f8").astype(float)
    policy = Policy(arch, params, header["action_scale"], PolicyKind(header["policy_kind"]))
    return Checkpoint(policy, header["system"], header["seed"], header["phase"], header.get("metadata", {}))


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
