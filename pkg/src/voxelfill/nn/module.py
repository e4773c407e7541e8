"""Parameter containers and the layer classes the models are built from."""

import numpy as np

from ..errors import ShapeMismatch
from .grid import Grid
from . import ops


class Module:
    """Holds named parameters and child modules; collects them recursively."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Grid):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def param(self, name: str, data: np.ndarray, requires_grad: bool = True) -> Grid:
        g = Grid(data, requires_grad=requires_grad, name=name)
        setattr(self, name, g)
        return g

    def parameters(self, prefix: str = "") -> dict:
        """Dotted name -> Grid, each parameter registered exactly once."""
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            for key, p in child.parameters(prefix + name + ".").items():
                if key in out:
                    raise ValueError(f"duplicate parameter name {key}")
                out[key] = p
        seen = set()
        for key, p in out.items():
            if id(p) in seen:
                raise ValueError(f"parameter {key} registered twice")
            seen.add(id(p))
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state(self, state: dict):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ShapeMismatch(f"state missing parameters: {sorted(missing)[:4]}...")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ShapeMismatch(f"{k}: stored {arr.shape} != model {p.data.shape}")
            p.data = arr.copy()

    def freeze(self):
        for p in self.parameters().values():
            p.requires_grad = False


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self.items = list(modules)
        for i, m in enumerate(modules):
            setattr(self, f"block{i}", m)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


def he_normal(rng, shape, fan_in, dtype):
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv(Module):
    """Strided N-D convolution layer (rank 2 or 3)."""

    def __init__(self, rank, cin, cout, k, rng, stride=1, padding=0,
                 bias=True, dtype=np.float32):
        super().__init__()
        self.rank = rank
        self.stride = stride
        self.padding = padding
        fan_in = cin * k ** rank
        self.weight = Grid(he_normal(rng, (cout, cin) + (k,) * rank, fan_in, dtype),
                           requires_grad=True)
        self.bias = Grid(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.conv(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose(Module):
    """Strided N-D transposed convolution layer (rank 2 or 3)."""

    def __init__(self, rank, cin, cout, k, rng, stride=1, padding=0,
                 bias=True, dtype=np.float32):
        super().__init__()
        self.rank = rank
        self.stride = stride
        self.padding = padding
        fan_in = cin * k ** rank
        self.weight = Grid(he_normal(rng, (cin, cout) + (k,) * rank, fan_in, dtype),
                           requires_grad=True)
        self.bias = Grid(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.transpose_conv(x, self.weight, self.bias, self.stride, self.padding)


class InstanceNorm(Module):
    def __init__(self, channels, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Grid(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Grid(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.instance_norm(x, self.gain, self.shift, self.eps)


class LayerNorm(Module):
    """Normalization over the last (feature) axis, for token sequences."""

    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Grid(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = Grid(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.normalize(x, (-1,), self.gain, self.shift, self.eps)


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.weight = Grid(he_normal(rng, (din, dout), din, dtype), requires_grad=True)
        self.bias = Grid(np.zeros(dout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = ops.add(out, self.bias)
        return out
