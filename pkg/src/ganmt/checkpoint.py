"""Checkpoint serialization.

Layout (all integers unsigned 64-bit little-endian)::

    header_length, header (UTF-8 JSON)
    tensor_count
    per tensor, in lexicographic name order:
        name_length, name (ASCII), rank, dims[rank], float32 data (little-endian)

Optimizer accumulators are stored as tensors named ``opt.g2.<param>`` and
``opt.d2.<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Vocabulary
from .model import ModelConfig
from .numeric import ParameterStore

FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")


@dataclass
class OptimizerState:
    """AdaDelta running averages of squared gradients and squared updates."""

    rho: float = 0.95
    epsilon: float = 1e-6
    g2: dict = field(default_factory=dict)
    d2: dict = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.rho, self.epsilon,
                              {k: v.copy() for k, v in self.g2.items()},
                              {k: v.copy() for k, v in self.d2.items()})


@dataclass
class Checkpoint:
    params: ParameterStore
    model_config: ModelConfig
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    optimizer: OptimizerState | None = None
    epoch: int = 0
    batch: int = 0
    step: int = 0
    w1: float = 0.0
    metadata: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_config": self.model_config.to_dict(),
            "vocab": {
                "src_sha256": self.src_vocab.digest(),
                "tgt_sha256": self.tgt_vocab.digest(),
                "src_tokens": self.src_vocab.itos,
                "tgt_tokens": self.tgt_vocab.itos,
            },
            "training": {
                "epoch": self.epoch,
                "batch": self.batch,
                "step": self.step,
                "w1": self.w1,
                "rho": self.optimizer.rho if self.optimizer else None,
                "epsilon": self.optimizer.epsilon if self.optimizer else None,
                **self.metadata,
            },
        }

    def tensors(self) -> dict:
        out = dict(self.params.items())
        if self.optimizer is not None:
            for name, v in self.optimizer.g2.items():
                out["opt.g2." + name] = v
            for name, v in self.optimizer.d2.items():
                out["opt.d2." + name] = v
        return out

    def to_bytes(self) -> bytes:
        header = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        parts = [_U64.pack(len(header)), header]
        tensors = self.tensors()
        parts.append(_U64.pack(len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = name.encode("ascii")
            parts += [_U64.pack(len(raw)), raw, _U64.pack(arr.ndim)]
            parts += [_U64.pack(d) for d in arr.shape]
            parts.append(arr.tobytes())
        return b"".join(parts)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        pos = 0

        def u64():
            nonlocal pos
            (v,) = _U64.unpack_from(buf, pos)
            pos += 8
            return v

        n = u64()
        header = json.loads(buf[pos:pos + n].decode("utf-8"))
        pos += n
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
        tensors = {}
        for _ in range(u64()):
            n = u64()
            name = buf[pos:pos + n].decode("ascii")
            pos += n
            shape = tuple(u64() for _ in range(u64()))
            count = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
        vocab = header["vocab"]
        src_vocab, tgt_vocab = Vocabulary(vocab["src_tokens"]), Vocabulary(vocab["tgt_tokens"])
        if src_vocab.digest() != vocab["src_sha256"] or tgt_vocab.digest() != vocab["tgt_sha256"]:
            raise ValueError("vocabulary hash mismatch inside checkpoint")
        training = dict(header["training"])
        params = ParameterStore({k: v for k, v in tensors.items() if not k.startswith("opt.")})
        optimizer = None
        if training.get("rho") is not None:
            optimizer = OptimizerState(
                training["rho"], training["epsilon"],
                {k[len("opt.g2."):]: v for k, v in tensors.items() if k.startswith("opt.g2.")},
                {k[len("opt.d2."):]: v for k, v in tensors.items() if k.startswith("opt.d2.")},
            )
        known = ("epoch", "batch", "step", "w1", "rho", "epsilon")
        return cls(
            params=params,
            model_config=ModelConfig.from_dict(header["model_config"]),
            src_vocab=src_vocab,
            tgt_vocab=tgt_vocab,
            optimizer=optimizer,
            epoch=training["epoch"],
            batch=training["batch"],
            step=training["step"],
            w1=training["w1"],
            metadata={k: v for k, v in training.items() if k not in known},
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())
