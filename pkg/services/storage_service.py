#!/usr/bin/env python3
"""
Storage Service for HSRL story generation
Checkpoints (JSON header line + little-endian float64 payload), content hashes and run manifests
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from agents.agent_model import TrainConfig, Variant
from agents.agent_policy import HierarchicalPolicy, build_policy
from diffcore.errors import SchemaError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hsrl-checkpoint/1"
PAYLOAD_DTYPE = np.dtype("<f8")
MANIFEST_NAME = "manifest.json"

PathLike = Union[str, Path]


def make_storage_key(prefix: str, identifier: str) -> str:
    """
    Create a content-addressed key.

    Args:
        prefix: namespace of the key (e.g. 'run', 'file')
        identifier: canonical identifier

    Returns:
        str: SHA-256 hex digest
    """
    key_str = f"{prefix}:{identifier}"
    return hashlib.sha256(key_str.encode()).hexdigest()


def content_hash(path: PathLike) -> str:
    """SHA-256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(path: PathLike, state: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write named arrays in name order behind a single JSON header line"""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        array = np.ascontiguousarray(state[name], dtype=PAYLOAD_DTYPE)
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes())
        offset += int(array.size)
    header = {"format": CHECKPOINT_FORMAT, "dtype": PAYLOAD_DTYPE.str, "params": entries, "metadata": metadata or {}}
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for chunk in chunks:
            handle.write(chunk)
    logger.info(f"Wrote checkpoint with {len(entries)} parameters ({offset} values) to {path}")
    return path


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint back into named arrays plus its metadata"""
    raw = Path(path).read_bytes()
    split = raw.find(b"\n")
    if split < 0:
        raise SchemaError(f"{path}: checkpoint has no header line")
    try:
        header = json.loads(raw[:split].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable checkpoint header ({exc})")
    if header.get("format") != CHECKPOINT_FORMAT or header.get("dtype") != PAYLOAD_DTYPE.str:
        raise SchemaError(f"{path}: unsupported checkpoint format {header.get('format')!r} / {header.get('dtype')!r}")
    payload = raw[split + 1:]
    if len(payload) % PAYLOAD_DTYPE.itemsize:
        raise SchemaError(f"{path}: payload length {len(payload)} is not a multiple of 8")
    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
    expected = sum(e["count"] for e in header["params"])
    if values.size != expected:
        raise SchemaError(f"{path}: payload holds {values.size} values, header declares {expected}")
    state = {}
    for entry in header["params"]:
        if int(np.prod(entry["shape"], dtype=np.int64)) != entry["count"]:
            raise SchemaError(f"{path}: {entry['name']} shape {entry['shape']} does not hold {entry['count']} values")
        chunk = values[entry["offset"]:entry["offset"] + entry["count"]]
        state[entry["name"]] = chunk.astype(np.float64).reshape(entry["shape"])
    return state, header["metadata"]


def save_policy(path: PathLike, policy: HierarchicalPolicy, cfg: TrainConfig, variant: Variant, vocab_size: int) -> Path:
    metadata = {
        "kind": "policy",
        "variant": Variant(variant).value,
        "vocab_size": vocab_size,
        "config": cfg.model_dump(mode="json"),
    }
    return save_checkpoint(path, policy.state_dict(), metadata)


def load_policy(path: PathLike) -> Tuple[HierarchicalPolicy, TrainConfig, Variant]:
    """Rebuild the policy described by a checkpoint's metadata and load its parameters"""
    state, metadata = load_checkpoint(path)
    if metadata.get("kind") != "policy":
        raise SchemaError(f"{path}: not a policy checkpoint")
    cfg = TrainConfig(**metadata["config"])
    variant = Variant(metadata["variant"])
    policy = build_policy(cfg, int(metadata["vocab_size"]), variant)
    unexpected = set(state) - set(policy.state_dict())
    if unexpected:
        raise SchemaError(f"{path}: unexpected parameters {sorted(unexpected)}")
    policy.load_state_dict(state)
    logger.info(f"Loaded {variant.value} policy from {path}")
    return policy, cfg, variant


# ----------------------------------------------------------------------
# Run manifests
# ----------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest(BaseModel):
    """What a command read, what it wrote and with which configuration"""
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=_now)
    finished_at: Optional[str] = None

    @property
    def run_key(self) -> str:
        """Key over everything that determines the outputs"""
        identity = json.dumps(
            {"command": self.command, "config": self.config, "seed": self.seed, "inputs": self.inputs},
            sort_keys=True,
        )
        return make_storage_key("run", identity)

    def add_input(self, label: str, path: PathLike):
        self.inputs[label] = content_hash(path)

    def add_output(self, path: PathLike):
        self.outputs.append(str(path))

    def write(self, out_dir: PathLike) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.finished_at = _now()
        target = out_dir / MANIFEST_NAME
        payload = self.model_dump()
        payload["run_key"] = self.run_key
        target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote run manifest {target}")
        return target

    @classmethod
    def read(cls, out_dir: PathLike) -> "RunManifest":
        payload = json.loads((Path(out_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
        payload.pop("run_key", None)
        return cls(**payload)
