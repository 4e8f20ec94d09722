"""Convolution layers and the parameter registry shared by model and optimizer."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor, conv2d, get_dtype


def init_he(shape: tuple[int, ...], rng_seed) -> np.ndarray:
    """He-uniform weights: ``U[-b, b]`` with ``b = sqrt(6 / fan_in)``.

    ``fan_in`` is the product of all dimensions after the first
    (``Cin * kh * kw`` for a conv kernel). ``rng_seed`` may be an int, a
    sequence of ints or a ``np.random.Generator``.
    """
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 0
    if fan_in <= 0:
        raise ValueError(f"init_he: zero fan-in for shape {shape}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_zero(shape: tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape)


class ParameterStore:
    """Ordered name -> trainable tensor map with Adam moment slots.

    Iteration order is insertion order, which fixes the order of optimizer
    updates and of tensors in a checkpoint.
    """

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)


class ConvLayer:
    """A 2-D convolution with bias whose tensors live in a :class:`ParameterStore`."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        cin: int,
        cout: int,
        kernel: int,
        stride: int = 1,
        pad: int | None = None,
        seed=0,
        zero: bool = False,
    ):
        self.name = name
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.pad = (kernel - 1) // 2 if pad is None else pad
        shape = (cout, cin, kernel, kernel)
        values = init_zero(shape) if zero else init_he(shape, seed)
        dt = get_dtype()
        self.weight = store.register(f"{name}.weight", Tensor(values.astype(dt)))
        self.bias = store.register(f"{name}.bias", Tensor(np.zeros(cout, dtype=dt)))

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def flops(self, h: int, w: int) -> int:
        """Operation count on an ``h x w`` input (multiply-add = 2)."""
        ho, wo = self.output_size(h, w)
        return 2 * self.kernel * self.kernel * self.cin * self.cout * ho * wo

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def __repr__(self) -> str:
        return f"ConvLayer({self.name!r}, {self.cin}->{self.cout}, k={self.kernel}, s={self.stride}, p={self.pad})"
