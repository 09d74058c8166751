"""Named parameter store backing a model's differentiable graph."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from skillseg.diffcore.tensor import Tensor


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); used for weight matrices."""
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParameterSet:
    """Ordered mapping name -> leaf Tensor, shared across forward passes."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, rng: np.random.Generator | None = None,
            kind: str = "weight", value: np.ndarray | None = None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        if value is not None:
            data = np.asarray(value, dtype=np.float64).reshape(shape)
        elif kind == "bias":
            data = np.zeros(shape)
        else:
            data = glorot_uniform(shape, rng)
        t = Tensor(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    @contextmanager
    def substituted(self, tensors: dict[str, Tensor]):
        """Temporarily swap named parameter tensors (gradient verification).

        Graphs built inside the context reference the substitutes, so a later
        backward pass accumulates into them even after restoration.
        """
        originals = {k: self._params[k] for k in tensors}
        self._params.update(tensors)
        try:
            yield
        finally:
            self._params.update(originals)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self._params[k].data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self._params[k].data.shape}")
            self._params[k].data = arr.copy()
