"""Stacked LSTM network with a softmax output layer.

Each internal layer stores its four gates stacked along the first axis in the
order ``input, forget, candidate, output``:

    W: (4J, I)   input weights
    R: (4J, J)   recurrent weights
    b: (4J,)     biases

All step functions accept either a single stream (vectors of shape ``(n,)``)
or a batch of independent streams (arrays of shape ``(B, n)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng, _softmax, as_vector, sigmoid, uniform_init

GATES = ("input", "forget", "candidate", "output")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 3
    num_layers: int = 3
    units: int = 60
    num_classes: int = 6

    def __post_init__(self):
        for name in ("input_dim", "num_layers", "units", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_layers": self.num_layers,
            "units": self.units,
            "num_classes": self.num_classes,
        }


@dataclass
class LstmLayerParams:
    W: np.ndarray
    R: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        four_j, n_in = self.W.shape
        if four_j % 4:
            raise ValueError(f"stacked gate rows must be a multiple of 4, got {four_j}")
        j = four_j // 4
        if self.R.shape != (four_j, j):
            raise ValueError(f"R has shape {self.R.shape}, expected {(four_j, j)}")
        if self.b.shape != (four_j,):
            raise ValueError(f"b has shape {self.b.shape}, expected {(four_j,)}")

    @property
    def units(self) -> int:
        return self.R.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_g, R_g, b_g)`` for one gate."""
        g = GATES.index(name)
        j = self.units
        s = slice(g * j, (g + 1) * j)
        return self.W[s], self.R[s], self.b[s]


@dataclass
class OutputLayerParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.b.shape != (self.W.shape[0],):
            raise ValueError(f"output bias shape {self.b.shape} does not match W {self.W.shape}")


@dataclass
class NetworkParams:
    layers: list[LstmLayerParams]
    output: OutputLayerParams

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one internal layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_dim != lower.units:
                raise ValueError(
                    f"layer input dim {upper.input_dim} does not match previous layer width {lower.units}"
                )
        if self.output.W.shape[1] != self.layers[-1].units:
            raise ValueError("output layer columns must equal the last internal layer width")

    @property
    def config(self) -> NetworkConfig:
        return NetworkConfig(
            input_dim=self.layers[0].input_dim,
            num_layers=len(self.layers),
            units=self.layers[0].units,
            num_classes=self.output.W.shape[0],
        )

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every parameter array in a fixed canonical order."""
        out = []
        for idx, layer in enumerate(self.layers):
            out += [(f"lstm{idx}.W", layer.W), (f"lstm{idx}.R", layer.R), (f"lstm{idx}.b", layer.b)]
        out += [("output.W", self.output.W), ("output.b", self.output.b)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def map(self, fn) -> "NetworkParams":
        """New params of the same structure with ``fn`` applied to every array."""
        return NetworkParams(
            layers=[LstmLayerParams(fn(l.W), fn(l.R), fn(l.b)) for l in self.layers],
            output=OutputLayerParams(fn(self.output.W), fn(self.output.b)),
        )

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    def copy(self) -> "NetworkParams":
        return self.map(np.array)

    def size(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class NetworkState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    def copy(self) -> "NetworkState":
        return NetworkState([x.copy() for x in self.h], [x.copy() for x in self.c])


@dataclass
class LayerTrace:
    x: np.ndarray        # layer input after any dropout mask
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray    # post-activation i, f, g, o stacked on the last axis
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class StepTrace:
    layers: list[LayerTrace] = field(default_factory=list)
    top: np.ndarray | None = None   # masked last-layer output fed to the output layer
    y: np.ndarray | None = None


def parameter_count(config: NetworkConfig) -> int:
    """Trainable scalars: ``sum_l 4J(I_l + J + 1) + H(J + 1)``."""
    j, h = config.units, config.num_classes
    total = 0
    n_in = config.input_dim
    for _ in range(config.num_layers):
        total += 4 * j * (n_in + j + 1)
        n_in = j
    return total + h * (j + 1)


def state_size(config: NetworkConfig) -> int:
    """Carried recurrent values: one ``h`` and one ``c`` per unit per layer."""
    return 2 * config.num_layers * config.units


def footprint(config: NetworkConfig) -> int:
    """Trainable parameters plus carried state; 74,166 for 3x60 with 3 inputs and 6 classes."""
    return parameter_count(config) + state_size(config)


def init_network(config: NetworkConfig, rng: Rng) -> NetworkParams:
    """Weights uniform on ``[-0.1, 0.1)``, biases zero."""
    j = config.units
    layers = []
    n_in = config.input_dim
    for _ in range(config.num_layers):
        W = uniform_init(rng, 4 * j, n_in)
        R = uniform_init(rng, 4 * j, j)
        layers.append(LstmLayerParams(W, R, np.zeros(4 * j)))
        n_in = j
    out = OutputLayerParams(uniform_init(rng, config.num_classes, j), np.zeros(config.num_classes))
    return NetworkParams(layers, out)


def reset_state(params: NetworkParams, batch: int | None = None) -> NetworkState:
    shape = (lambda j: (j,)) if batch is None else (lambda j: (batch, j))
    return NetworkState(
        h=[np.zeros(shape(l.units)) for l in params.layers],
        c=[np.zeros(shape(l.units)) for l in params.layers],
    )


def _cell(layer: LstmLayerParams, x, h_prev, c_prev):
    j = layer.units
    z = x @ layer.W.T + h_prev @ layer.R.T + layer.b
    gates = np.empty_like(z)
    gates[..., : 2 * j] = sigmoid(z[..., : 2 * j])
    gates[..., 2 * j : 3 * j] = np.tanh(z[..., 2 * j : 3 * j])
    gates[..., 3 * j :] = sigmoid(z[..., 3 * j :])
    i, f, g, o = (gates[..., k * j : (k + 1) * j] for k in range(4))
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LayerTrace(x, h_prev, c_prev, gates, c, tanh_c, h)


def lstm_cell_step(params: LstmLayerParams, x, h_prev, c_prev):
    """One LSTM step; returns ``(h, c, trace)``.

    i = s(W_i x + R_i h + b_i), f = s(...), g = tanh(...), o = s(...),
    c = f*c_prev + i*g, h = o*tanh(c).  No peepholes.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has width {x.shape[-1]}, layer expects {params.input_dim}")
    if h_prev.shape[-1] != params.units or c_prev.shape != h_prev.shape:
        raise ValueError(f"state shapes {h_prev.shape}/{c_prev.shape} do not match {params.units} units")
    return _cell(params, x, h_prev, c_prev)


def forward_step(params: NetworkParams, state: NetworkState, x, masks=None):
    """Advance every layer by one sample; returns ``(y, new_state, trace)``.

    ``masks`` (optional) holds one multiplier vector per internal layer,
    applied to that layer's output on its way up (never on the recurrent
    path). Inverted-dropout masks already carry the ``1/(1-p)`` scale.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.layers[0].input_dim:
        raise ValueError(f"input has width {x.shape[-1]}, network expects {params.layers[0].input_dim}")
    if masks is not None and len(masks) != len(params.layers):
        raise ValueError(f"expected {len(params.layers)} masks, got {len(masks)}")
    trace = StepTrace()
    new_h, new_c = [], []
    inp = x
    for idx, layer in enumerate(params.layers):
        h, c, lt = _cell(layer, inp, state.h[idx], state.c[idx])
        trace.layers.append(lt)
        new_h.append(h)
        new_c.append(c)
        inp = h if masks is None else h * masks[idx]
    trace.top = inp
    y = _softmax(inp @ params.output.W.T + params.output.b)
    trace.y = y
    return y, NetworkState(new_h, new_c), trace


def predict_class(y) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot take argmax of an empty vector")
    return int(np.argmax(as_vector(y)))
