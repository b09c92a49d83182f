"""Dense tanh networks over flat parameter vectors.

Parameters for all layers live in one float64 vector so the optimizers and
checkpoint format can treat every trainable object uniformly. The layout is
per-layer (weight, bias) with weights stored (fan_in, fan_out) row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat  # noqa: F401  (concat re-exported for callers)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a dense network.

    ``residual`` adds an identity skip at every layer whose input and output
    widths match (dictionary networks use this; operator networks do not).
    The final layer is affine with no activation.
    """

    input_dim: int
    hidden_widths: tuple = ()
    output_dim: int = 1
    activation: str = "tanh"
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("network dims must be >= 1")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self):
        widths = (self.input_dim,) + self.hidden_widths + (self.output_dim,)
        return list(zip(widths[:-1], widths[1:]))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)

    def param_slices(self):
        """Per-layer (weight_slice, bias_slice, fan_in, fan_out)."""
        out = []
        offset = 0
        for fi, fo in self.layer_dims:
            w = slice(offset, offset + fi * fo)
            b = slice(offset + fi * fo, offset + fi * fo + fo)
            out.append((w, b, fi, fo))
            offset = b.stop
        return out


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count)
    for w, _, fi, fo in spec.param_slices():
        bound = np.sqrt(6.0 / (fi + fo))
        params[w] = rng.uniform(-bound, bound, size=fi * fo)
    return params


def _check_params(spec: NetworkSpec, params: np.ndarray):
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"parameter vector has length {params.shape}, spec needs {spec.param_count}"
        )


def forward_batch(spec: NetworkSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Plain (untaped) forward pass on a batch of row vectors (n, input_dim)."""
    params = np.asarray(params, dtype=np.float64)
    _check_params(spec, params)
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"input width {h.shape[1]} != {spec.input_dim}")
    slices = spec.param_slices()
    last = len(slices) - 1
    for i, (w, b, fi, fo) in enumerate(slices):
        weight = params[w].reshape(fi, fo)
        z = h @ weight + params[b]
        if i < last:
            z = np.tanh(z)
        if spec.residual and fi == fo:
            z = z + h
        h = z
    return h


def forward(spec: NetworkSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward pass on a single input vector."""
    return forward_batch(spec, params, np.asarray(x)[None, :])[0]


def forward_hidden(spec: NetworkSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Activations feeding the output layer (the input itself if no hidden layers)."""
    params = np.asarray(params, dtype=np.float64)
    _check_params(spec, params)
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    slices = spec.param_slices()
    for i, (w, b, fi, fo) in enumerate(slices[:-1]):
        weight = params[w].reshape(fi, fo)
        z = np.tanh(h @ weight + params[b])
        if spec.residual and fi == fo:
            z = z + h
        h = z
    return h


def forward_tape(spec: NetworkSpec, theta, x) -> Tensor:
    """Taped forward pass; ``theta`` and/or ``x`` may be Tensor leaves.

    ``x`` is a batch (n, input_dim); returns a (n, output_dim) node.
    """
    if not isinstance(theta, Tensor):
        theta = Tensor(np.asarray(theta, dtype=np.float64))
    _check_params(spec, theta.value)
    h = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    slices = spec.param_slices()
    last = len(slices) - 1
    for i, (w, b, fi, fo) in enumerate(slices):
        weight = theta[w].reshape(fi, fo)
        z = h @ weight + theta[b]
        if i < last:
            z = z.tanh()
        if spec.residual and fi == fo:
            z = z + h
        h = z
    return h
