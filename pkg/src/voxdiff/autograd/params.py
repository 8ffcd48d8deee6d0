from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered name -> parameter tensor mapping with a few initializers."""

    def __init__(self, rng: np.random.Generator | None = None):
        self._params: dict[str, Tensor] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def conv(self, name: str, cout: int, cin: int, ksize: tuple[int, ...], zero: bool = False,
             transpose: bool = False) -> None:
        """He-uniform conv weight plus zero bias. Transposed layout is (cin, cout, *k)."""
        shape = (cin, cout) + ksize if transpose else (cout, cin) + ksize
        fan_in = cin * int(np.prod(ksize))
        bound = np.sqrt(6.0 / fan_in)
        w = np.zeros(shape) if zero else self.rng.uniform(-bound, bound, size=shape)
        self.add(name + ".w", w)
        self.add(name + ".b", np.zeros(cout))

    def dense(self, name: str, dout: int, din: int, zero: bool = False) -> None:
        bound = np.sqrt(6.0 / din)
        w = np.zeros((dout, din)) if zero else self.rng.uniform(-bound, bound, size=(dout, din))
        self.add(name + ".w", w)
        self.add(name + ".b", np.zeros(dout))

    def norm(self, name: str, channels: int) -> None:
        self.add(name + ".g", np.ones(channels))
        self.add(name + ".b", np.zeros(channels))

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for k, t in self._params.items():
            key = prefix + k
            if key not in arrays:
                raise KeyError(f"checkpoint is missing parameter {key!r}")
            if arrays[key].shape != t.shape:
                raise ValueError(f"parameter {key!r}: checkpoint shape {arrays[key].shape} != {t.shape}")
            t.data = np.array(arrays[key], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def freeze(self) -> None:
        for t in self._params.values():
            t.requires_grad = False
