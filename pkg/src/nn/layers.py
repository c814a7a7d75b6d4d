"""
Плотные слои и многослойные перцептроны поверх ParameterStore
"""
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from ..shared.errors import DimensionError
from .tape import GradientTape, ParameterStore, Var


class Activation(Enum):
    """Функция активации слоя"""
    TANH = "tanh"
    IDENTITY = "identity"


class DenseLayer:
    """Аффинное преобразование с активацией: y = act(W·x + b)"""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 activation: Activation = Activation.TANH):
        if in_dim < 1 or out_dim < 1:
            raise DimensionError(f"layer {name}: dimensions must be positive, got {in_dim}->{out_dim}")
        self.store = store
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = Activation(activation)
        self.weight_name = store.add(f"{name}/W", (out_dim, in_dim), init='glorot')
        self.bias_name = store.add(f"{name}/b", (out_dim,), init='zeros')

    @property
    def weights(self) -> np.ndarray:
        return self.store.view(self.weight_name)

    @property
    def biases(self) -> np.ndarray:
        return self.store.view(self.bias_name)

    @property
    def parameter_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim

    def forward(self, x: Var, tape: GradientTape) -> Var:
        y = tape.linear(x, tape.parameter(self.weight_name), tape.parameter(self.bias_name))
        if self.activation is Activation.TANH:
            y = tape.tanh(y)
        return y


class Mlp:
    """Последовательность плотных слоёв с согласованными размерностями"""

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise DimensionError("an MLP needs at least one layer")
        for first, second in zip(layers, layers[1:]):
            if first.out_dim != second.in_dim:
                raise DimensionError(f"layer {first.name} outputs {first.out_dim}, "
                                     f"layer {second.name} expects {second.in_dim}")
        self.layers: List[DenseLayer] = layers

    @classmethod
    def create(cls, store: ParameterStore, name: str, dims: Sequence[int],
               hidden_activation: Activation = Activation.TANH,
               output_activation: Activation = Activation.IDENTITY) -> 'Mlp':
        """
        Args:
            dims: [in, hidden..., out]
        """
        if len(dims) < 2:
            raise DimensionError("dims must contain input and output sizes")
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            layers.append(DenseLayer(store, f"{name}/layer{i}", d_in, d_out,
                                     output_activation if last else hidden_activation))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def forward(self, x: Var, tape: GradientTape) -> Var:
        if x.value.ndim != 2 or x.value.shape[1] != self.in_dim:
            raise DimensionError(f"MLP expects inputs of width {self.in_dim}, got shape {x.value.shape}")
        for layer in self.layers:
            x = layer.forward(x, tape)
        return x


def mlp_forward(mlp: Mlp, input_vector, tape: Optional[GradientTape] = None) -> np.ndarray:
    """
    Прямой проход для одного вектора.
    С лентой записывает всё необходимое для точного обратного прохода
    """
    x = np.asarray(input_vector, dtype=np.float64)
    if x.ndim != 1 or x.size != mlp.in_dim:
        raise DimensionError(f"input of length {x.size} does not match first layer in_dim {mlp.in_dim}")
    tape = tape if tape is not None else GradientTape(mlp.layers[0].store, record=False)
    out = mlp.forward(tape.constant(x.reshape(1, -1)), tape)
    tape.output = out
    return out.value[0].copy()
