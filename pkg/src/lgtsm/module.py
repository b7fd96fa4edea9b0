"""Minimal parameter container with hierarchical naming."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autograd import Parameter


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def set_buffer(self, name: str, value: np.ndarray):
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name][...] = value

    def named_parameters(self, prefix: str = ""):
        for k, p in self._params.items():
            yield prefix + k, p
        for k, child in self._children.items():
            yield from child.named_parameters(prefix + k + ".")

    def named_buffers(self, prefix: str = ""):
        for k, b in self._buffers.items():
            yield prefix + k, b
        for k, child in self._children.items():
            yield from child.named_buffers(prefix + k + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def assign_names(self, prefix: str = ""):
        """Stamp fully qualified names onto parameters (used by Adam/checkpoints)."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast parameters and buffers in place."""
        for m in self.modules():
            for p in m._params.values():
                p.data = p.data.astype(dtype)
                p.grad = None
            for k, b in list(m._buffers.items()):
                nb = b.astype(dtype)
                m._buffers[k] = nb
                object.__setattr__(m, k, nb)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)
