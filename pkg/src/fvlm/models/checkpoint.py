"""Binary model checkpoints.

Layout (little-endian throughout):

    magic "FVLM" | u32 version | u16 len + architecture tag (utf-8)
    | u32 len + config block (JSON: vocab_size, model config, and for the
      enhanced model the embedded predictor's config)
    | 32-byte vocabulary SHA-256
    | u32 block count | blocks

Each parameter block is: u16 name length, name (utf-8), u32 rows, u32 cols,
u8 float width (8 or 4), row-major payload.  Vectors are stored with
cols = 1.  Width 8 round-trips bit-exactly; width 4 is a compact mode that
downcasts to float32 on disk.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import warnings

import numpy as np

from ..corpus import Vocabulary
from ..errors import CheckpointError
from .architectures import MODEL_KINDS, EnhancedLm, FvPredictor
from .config import LmConfig

MAGIC = b"FVLM"
VERSION = 1


def save_checkpoint(model, path, float_width: int = 8) -> None:
    """Serialize a model; the file appears atomically (temp file + rename)."""
    if float_width not in (4, 8):
        raise CheckpointError(f"float width must be 4 or 8, got {float_width}")
    config_block = {"vocab_size": model.vocab_size, "lm": model.config.to_dict()}
    if isinstance(model, EnhancedLm):
        config_block["predictor_lm"] = model.predictor.config.to_dict()
    config_bytes = json.dumps(config_block, sort_keys=True).encode("utf-8")
    kind_bytes = model.kind.encode("utf-8")
    params = model.param_dict()

    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<H", len(kind_bytes)))
            f.write(kind_bytes)
            f.write(struct.pack("<I", len(config_bytes)))
            f.write(config_bytes)
            f.write(model.vocab_hash)
            f.write(struct.pack("<I", len(params)))
            for name, arr in params.items():
                name_b = name.encode("utf-8")
                rows, cols = (arr.shape[0], 1) if arr.ndim == 1 else arr.shape
                f.write(struct.pack("<H", len(name_b)))
                f.write(name_b)
                f.write(struct.pack("<IIB", rows, cols, float_width))
                dtype = "<f8" if float_width == 8 else "<f4"
                f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: while reading {what}")
    return data


def load_checkpoint(path, vocab: Vocabulary | None = None, expect_kind: str | None = None):
    """Rebuild a model from disk.

    Raises CheckpointError on corruption or an architecture mismatch; a
    vocabulary hash mismatch (when a vocabulary is supplied) only warns.
    """
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"not a FVLM checkpoint: {path}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        (kind_len,) = struct.unpack("<H", _read_exact(f, 2, "kind length"))
        kind = _read_exact(f, kind_len, "kind").decode("utf-8")
        if kind not in MODEL_KINDS:
            raise CheckpointError(f"unknown architecture tag '{kind}'")
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(f"architecture mismatch: expected '{expect_kind}', found '{kind}'")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            config_block = json.loads(_read_exact(f, cfg_len, "config").decode("utf-8"))
            vocab_size = int(config_block["vocab_size"])
            config = LmConfig.from_dict(config_block["lm"])
        except (ValueError, KeyError, TypeError) as err:
            raise CheckpointError(f"corrupt config block: {err}") from err
        vocab_hash = _read_exact(f, 32, "vocabulary hash")

        if kind == "enhanced":
            pred_config = LmConfig.from_dict(config_block.get("predictor_lm", config_block["lm"]))
            predictor = FvPredictor(pred_config, vocab_size)
            model = EnhancedLm(config, vocab_size, predictor=predictor)
        else:
            model = MODEL_KINDS[kind](config, vocab_size)
        model.vocab_hash = vocab_hash

        targets = model.param_dict()
        (n_blocks,) = struct.unpack("<I", _read_exact(f, 4, "block count"))
        seen = set()
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "block name length"))
            name = _read_exact(f, name_len, "block name").decode("utf-8")
            rows, cols, width = struct.unpack("<IIB", _read_exact(f, 9, f"shape of '{name}'"))
            if width not in (4, 8):
                raise CheckpointError(f"block '{name}': bad float width {width}")
            if name not in targets:
                raise CheckpointError(f"unexpected parameter block '{name}' for kind '{kind}'")
            payload = _read_exact(f, rows * cols * width, f"payload of '{name}'")
            dtype = "<f8" if width == 8 else "<f4"
            arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
            target = targets[name]
            if arr.size != target.size:
                raise CheckpointError(
                    f"block '{name}' holds {arr.size} values, model expects {target.size}")
            target[:] = arr.reshape(target.shape)
            seen.add(name)
        missing = set(targets) - seen
        if missing:
            raise CheckpointError(f"checkpoint is missing parameter blocks: {sorted(missing)}")
        if f.read(1):
            raise CheckpointError("trailing bytes after last parameter block")

    if vocab is not None and vocab.content_hash() != vocab_hash:
        warnings.warn(f"vocabulary hash mismatch for checkpoint {path}", RuntimeWarning)
    return model
