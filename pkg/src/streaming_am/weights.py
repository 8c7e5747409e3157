"""Named-tensor store holding one encoder's parameters."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from typing import Union

import numpy as np

from .errors import MissingTensorError, NonFiniteError
from .numerics import DTYPE
from .quant import QuantizedMatrix, quantize_per_channel

Tensor = Union[np.ndarray, QuantizedMatrix]


def is_matrix_weight(name: str, tensor: Tensor) -> bool:
    """Weight matrices (as opposed to biases and norm parameters) are quantizable."""
    return name.endswith(".weight") and (isinstance(tensor, QuantizedMatrix) or tensor.ndim == 2)


class WeightSet(Mapping):
    """Immutable mapping from tensor name to float32 array or quantized matrix."""

    def __init__(self, tensors: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]] = ()):
        items = dict(tensors)
        store: dict[str, Tensor] = {}
        for name, t in items.items():
            if not isinstance(t, QuantizedMatrix):
                t = np.ascontiguousarray(t, dtype=DTYPE)
                if not np.all(np.isfinite(t)):
                    raise NonFiniteError(f"tensor {name!r} contains NaN or Inf")
                t.setflags(write=False)
            store[name] = t
        self._tensors = store

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingTensorError(f"missing tensor {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"WeightSet({len(self)} tensors, {self.num_parameters()} parameters)"

    def require(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self._tensors]
        if missing:
            raise MissingTensorError(f"missing tensors: {', '.join(missing)}")

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self._tensors.values())

    @property
    def matrix_names(self) -> list[str]:
        return [n for n, t in self._tensors.items() if is_matrix_weight(n, t)]

    def float_matrices(self) -> list[str]:
        """Names of weight matrices that are still stored as float32."""
        return [n for n in self.matrix_names if not isinstance(self._tensors[n], QuantizedMatrix)]

    @property
    def is_quantized(self) -> bool:
        return bool(self.matrix_names) and not self.float_matrices()

    def quantized(self) -> "WeightSet":
        """Copy with every weight matrix quantized per channel; vectors stay float."""
        out = {}
        for name, t in self._tensors.items():
            if is_matrix_weight(name, t) and not isinstance(t, QuantizedMatrix):
                t = quantize_per_channel(t)
            out[name] = t
        return WeightSet(out)

    def dequantized(self) -> "WeightSet":
        return WeightSet(
            {
                n: t.dequantize(DTYPE) if isinstance(t, QuantizedMatrix) else t
                for n, t in self._tensors.items()
            }
        )
