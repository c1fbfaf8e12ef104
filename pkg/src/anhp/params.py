"""Named collections of trainable leaf tensors."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor


class ParameterStore:
    """Ordered name -> trainable :class:`Tensor` mapping.

    Parameter tensors are read-only during forward/backward passes; only the
    optimizer mutates ``.value`` between steps.
    """

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        t = Tensor(arr, requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._items.values())

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._items.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(arrays) != set(self._items):
            missing = sorted(set(self._items) - set(arrays))
            extra = sorted(set(arrays) - set(self._items))
            raise KeyError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for k, v in arrays.items():
            if k not in self._items:
                continue
            t = self._items[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {t.shape}")
            t.value[...] = v


def uniform_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Entries uniform in [-a, a] with a = 1/sqrt(fan-in)."""
    a = 1.0 / math.sqrt(cols)
    return rng.uniform(-a, a, size=(rows, cols))


def type_embedding(rng: np.random.Generator, dim: int) -> np.ndarray:
    return 0.1 * rng.standard_normal(dim)


def inverse_softplus(y: float) -> float:
    """Raw value whose softplus is ``y`` (for positive reparameterisations)."""
    return float(y + math.log(-math.expm1(-y)))
