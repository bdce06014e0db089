"""Named trainable tensors, Adam updates, and the binary checkpoint format.

Checkpoint layout: an 8-byte magic string, one format-version byte, then one
record per parameter: uint32 LE name length, UTF-8 name bytes, uint32 LE rank,
rank x uint64 LE shape entries, and the float64 little-endian payload.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Tape, Tensor

CHECKPOINT_MAGIC = b"MSTARPRM"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Unrecognized or truncated checkpoint file."""


@dataclass
class Parameter:
    """A named trainable array with its Adam accumulators."""

    name: str
    data: np.ndarray
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.data)
        if self.adam_m.shape != self.data.shape or self.adam_v.shape != self.data.shape:
            raise ValueError(f"accumulator shape mismatch for parameter {self.name!r}")


def uniform_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in = last axis."""
    bound = 1.0 / np.sqrt(shape[-1])
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Insertion-ordered parameter registry with tape-wrapping helpers."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def create(self, name: str, shape: tuple[int, ...], rng: np.random.Generator,
               zero: bool = False) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        data = np.zeros(shape, dtype=np.float64) if zero else uniform_init(shape, rng)
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def wrap(self, tape: Tape | None) -> dict[str, Tensor]:
        """Tensors over the live parameter buffers; trainable iff a tape is given."""
        trainable = tape is not None
        return {
            name: Tensor(p.data, tape, requires_grad=trainable)
            for name, p in self._params.items()
        }

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(p.data) for name, p in self._params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, snapshot: Mapping[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            value = snapshot[name]
            if value.shape != p.data.shape:
                raise ValueError(f"snapshot shape mismatch for {name!r}")
            p.data[...] = value

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Adopt checkpointed values, requiring an exact name and shape match."""
        missing = [name for name in self._params if name not in state]
        extra = [name for name in state if name not in self._params]
        if missing or extra:
            raise CheckpointError(
                f"checkpoint does not match the model: missing={missing}, extra={extra}"
            )
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise CheckpointError(
                    f"checkpoint shape mismatch for {name!r}: "
                    f"{value.shape} vs {p.data.shape}"
                )
            p.data[...] = value


def adam_step(
    params: Iterable[Parameter],
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with bias correction; missing grads mean zero."""
    for p in params:
        g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {p.name!r}")
        p.step_count += 1
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def save_checkpoint(path: str | os.PathLike, params: Iterable[Parameter]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    def take(fh, n: int, what: str) -> bytes:
        blob = fh.read(n)
        if len(blob) != n:
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        return blob

    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a parameter checkpoint")
        version = fh.read(1)
        if version != bytes([CHECKPOINT_VERSION]):
            raise CheckpointError(f"unsupported checkpoint version {version!r}")
        while True:
            header = fh.read(4)
            if not header:
                break
            if len(header) != 4:
                raise CheckpointError("truncated checkpoint while reading a record header")
            (name_len,) = struct.unpack("<I", header)
            name = take(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", take(fh, 4, "rank"))
            shape = tuple(
                struct.unpack("<Q", take(fh, 8, "shape"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(take(fh, 8 * count, "data"), dtype="<f8")
            out[name] = data.reshape(shape).astype(np.float64)
    return out
