"""
Checkpoint file format.

    magic  b"GDCK"
    uint32 format version            (little-endian)
    uint64 header length in bytes    (little-endian)
    header UTF-8 JSON, sorted keys
    blobs  raw little-endian tensor data, concatenated in tensor-name order

The header carries the run config snapshot, step counter, RNG state, Adam step, the
vocabulary text, free-form metadata and a tensor index of
{name, dtype, shape, offset, nbytes}. Offsets are relative to the first blob byte.

Tensor namespaces: model tensors by their ModelParams name, `vqvae.<name>` for the
frozen tokenizer and `optim.m.<name>` / `optim.v.<name>` for the Adam moments.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .config import RunConfig, config_from_json
from .errors import CheckpointError
from .model import ModelParams
from .numerics import Adam, Tensor, parameter
from .observability import get_logger
from .vocab import Vocab
from .vqvae import VQTokenizer

logger = get_logger("checkpoint")

MAGIC = b"GDCK"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
DTYPES = ("<f4", "<f8", "<i8")
VQ_PREFIX = "vqvae."
OPTIM_PREFIX = "optim."


@dataclass
class Checkpoint:
    """
    In-memory checkpoint. `config_json` and `vocab_text` are kept verbatim so a
    loaded checkpoint saves back to identical bytes.
    """

    config_json: str
    vocab_text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_state: dict[str, int] = field(default_factory=dict)
    adam_t: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> RunConfig:
        return config_from_json(self.config_json)

    @property
    def vocab(self) -> Vocab:
        try:
            return Vocab.from_text(self.vocab_text)
        except ValueError as e:
            raise CheckpointError(f"stored vocabulary is unreadable: {e}") from e

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {
            n: a for n, a in self.tensors.items()
            if not n.startswith(VQ_PREFIX) and not n.startswith(OPTIM_PREFIX)
        }

    def has_tokenizer(self) -> bool:
        return any(n.startswith(VQ_PREFIX) for n in self.tensors)


# ============ Capture / restore ============

def capture(
    config: RunConfig,
    vocab: Vocab,
    params: ModelParams,
    step: int = 0,
    optimizer: Optional[Adam] = None,
    tokenizer: Optional[VQTokenizer] = None,
    rng_state: Optional[Mapping[str, int]] = None,
    meta: Optional[Mapping[str, Any]] = None,
) -> Checkpoint:
    """Snapshot a run's state (arrays are copied)"""
    tensors = {name: np.array(t.data) for name, t in params.tensors.items()}
    if tokenizer is not None:
        tensors.update({f"{VQ_PREFIX}{n}": np.array(t.data) for n, t in tokenizer.params.items()})
    if optimizer is not None:
        tensors.update({n: np.array(a) for n, a in optimizer.state_tensors().items()})
    return Checkpoint(
        config_json=config.to_json(),
        vocab_text=vocab.to_text(),
        tensors=tensors,
        step=int(step),
        rng_state={k: int(v) for k, v in (rng_state or {"seed": config.seed, "step": int(step)}).items()},
        adam_t=optimizer.t if optimizer is not None else 0,
        meta=dict(meta or {}),
    )


def restore_params(ckpt: Checkpoint) -> ModelParams:
    """Model tensors (heads included) as trainable parameters"""
    config, vocab = ckpt.config, ckpt.vocab
    tensors = {n: parameter(a.copy()) for n, a in ckpt.model_tensors().items()}
    if "embed.tokens" not in tensors:
        raise CheckpointError("checkpoint holds no model tensors")
    rows = tensors["embed.tokens"].shape[0]
    if rows != vocab.size:
        raise CheckpointError(f"token table has {rows} rows but the stored vocabulary has {vocab.size}")
    return ModelParams(config=config.model, vocab_size=vocab.size, layout_bins=vocab.layout_bins, tensors=tensors)


def restore_tokenizer(ckpt: Checkpoint) -> VQTokenizer:
    if not ckpt.has_tokenizer():
        raise CheckpointError("checkpoint holds no VQ-VAE tokenizer")
    params: dict[str, Tensor] = {}
    for name, array in ckpt.tensors.items():
        if name.startswith(VQ_PREFIX):
            params[name[len(VQ_PREFIX):]] = Tensor(array.copy())
    return VQTokenizer(params)


def restore_optimizer(ckpt: Checkpoint, optimizer: Adam) -> Adam:
    """Load the stored Adam moments and step into `optimizer`"""
    state = {n: a for n, a in ckpt.tensors.items() if n.startswith(OPTIM_PREFIX)}
    unknown = sorted(
        n.split(".", 2)[2] for n in state if n.split(".", 2)[2] not in optimizer.params
    )
    if unknown:
        raise CheckpointError(f"optimizer state for unknown parameters: {', '.join(unknown[:3])}")
    optimizer.load_state(state, ckpt.adam_t)
    return optimizer


# ============ Encoding ============

def _dtype_name(array: np.ndarray) -> str:
    kind = array.dtype.kind
    if kind == "f":
        name = "<f8" if array.dtype.itemsize == 8 else "<f4"
    elif kind in "iub":
        name = "<i8"
    else:
        raise CheckpointError(f"cannot store arrays of dtype {array.dtype}")
    return name


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    index = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        array = np.asarray(ckpt.tensors[name])
        dtype = _dtype_name(array)
        raw = np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "adam_t": int(ckpt.adam_t),
        "config": ckpt.config_json,
        "meta": ckpt.meta,
        "rng_state": ckpt.rng_state,
        "step": int(ckpt.step),
        "tensors": index,
        "vocab": ckpt.vocab_text,
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(blobs)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Raises:
        CheckpointError: bad magic, unknown version, malformed header or truncated data
    """
    if len(data) < _PREAMBLE.size:
        raise CheckpointError(f"{source}: truncated before the header")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a gendoc checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _PREAMBLE.size
    if len(data) < start + header_len:
        raise CheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
        index = header["tensors"]
        blob_start = start + header_len
        tensors: dict[str, np.ndarray] = {}
        for entry in index:
            dtype = entry["dtype"]
            if dtype not in DTYPES:
                raise CheckpointError(f"{source}: tensor {entry['name']} has unknown dtype {dtype}")
            lo = blob_start + int(entry["offset"])
            hi = lo + int(entry["nbytes"])
            if hi > len(data):
                raise CheckpointError(f"{source}: truncated data for tensor {entry['name']}")
            array = np.frombuffer(data[lo:hi], dtype=np.dtype(dtype)).reshape(entry["shape"])
            tensors[entry["name"]] = array.astype(array.dtype.newbyteorder("="))
        return Checkpoint(
            config_json=header["config"],
            vocab_text=header["vocab"],
            tensors=tensors,
            step=int(header["step"]),
            rng_state={k: int(v) for k, v in header["rng_state"].items()},
            adam_t=int(header["adam_t"]),
            meta=header.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{source}: malformed checkpoint header: {e}") from e


# ============ Files ============

def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """Write atomically (temp file + rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    logger.info(f"saved checkpoint step {ckpt.step} to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))
