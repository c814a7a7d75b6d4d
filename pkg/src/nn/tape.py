"""
Хранилище параметров и лента обратного режима дифференцирования

Все параметры модели лежат в одном плоском векторе float64; слои получают
представления (view) его участков. Лента записывает операции в порядке
вычисления и при обратном проходе накапливает градиент в вектор той же длины
"""
from collections import OrderedDict
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..shared.errors import DimensionError, TapeError


class ParameterStore:
    """Плоский вектор параметров с именованными участками"""

    def __init__(self):
        self._specs: "OrderedDict[str, Tuple[int, Tuple[int, ...], str]]" = OrderedDict()
        self._size = 0
        self.values: Optional[np.ndarray] = None

    def add(self, name: str, shape: Tuple[int, ...], init: str = 'glorot') -> str:
        """Зарегистрировать параметр; инициализация выполняется в build()"""
        if self.values is not None:
            raise TapeError("parameter store is already built")
        if name in self._specs:
            raise TapeError(f"duplicate parameter name '{name}'")
        shape = tuple(int(s) for s in shape)
        self._specs[name] = (self._size, shape, init)
        self._size += int(np.prod(shape)) if shape else 1
        return name

    def build(self, rng: Optional[np.random.Generator] = None) -> 'ParameterStore':
        """
        Выделить вектор и инициализировать параметры в порядке регистрации:
        веса - uniform(±sqrt(6/(fan_in+fan_out))), смещения - нули
        """
        values = np.zeros(self._size, dtype=np.float64)
        for name, (offset, shape, init) in self._specs.items():
            size = int(np.prod(shape)) if shape else 1
            if init == 'zeros':
                continue
            if rng is None:
                raise TapeError("random generator required to initialize weights")
            if init == 'glorot':
                fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, size)
            elif init == 'embedding':
                fan_out, fan_in = 1, shape[-1]
            else:
                raise TapeError(f"unknown initializer '{init}'")
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[offset:offset + size] = rng.uniform(-limit, limit, size=size)
        self.values = values
        return self

    @property
    def size(self) -> int:
        return self._size

    @property
    def names(self) -> List[str]:
        return list(self._specs)

    def spec(self, name: str) -> Tuple[int, int, Tuple[int, ...]]:
        offset, shape, _ = self._specs[name]
        return offset, (int(np.prod(shape)) if shape else 1), shape

    def view(self, name: str) -> np.ndarray:
        """Представление параметра (изменение меняет плоский вектор)"""
        if self.values is None:
            raise TapeError("parameter store is not built")
        offset, size, shape = self.spec(name)
        return self.values[offset:offset + size].reshape(shape)

    def count(self, prefix: str = '') -> int:
        """Число скаляров в параметрах с данным префиксом имени"""
        return sum(self.spec(name)[1] for name in self._specs if name.startswith(prefix))

    def load(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self._size,):
            raise DimensionError(f"expected {self._size} parameters, got {values.shape}")
        if self.values is None:
            self.values = values.copy()
        else:
            self.values[:] = values


class Var:
    """Значение на ленте; index = None для констант и незаписанных значений"""
    __slots__ = ('value', 'index')

    def __init__(self, value: np.ndarray, index: Optional[int] = None):
        self.value = value
        self.index = index

    @property
    def shape(self):
        return self.value.shape


class _Node:
    __slots__ = ('parents', 'backward', 'param')

    def __init__(self, parents, backward, param=None):
        self.parents = parents
        self.backward = backward
        self.param = param


class GradientTape:
    """
    Лента операций. С record=False вычисляет те же значения тем же кодом,
    но ничего не записывает
    """

    def __init__(self, store: ParameterStore, record: bool = True):
        self.store = store
        self.record = record
        self._nodes: List[_Node] = []
        self.output: Optional[Var] = None

    def __len__(self):
        return len(self._nodes)

    # --- листья ---

    def constant(self, array) -> Var:
        return Var(np.asarray(array, dtype=np.float64))

    def parameter(self, name: str) -> Var:
        value = self.store.view(name)
        if not self.record:
            return Var(value)
        offset, size, _ = self.store.spec(name)
        self._nodes.append(_Node((), None, param=(offset, size)))
        return Var(value, len(self._nodes) - 1)

    def _emit(self, value: np.ndarray, parents: Sequence[Var],
              backward: Callable[[np.ndarray], Tuple]) -> Var:
        indices = tuple(p.index for p in parents)
        if not self.record or all(i is None for i in indices):
            out = Var(value)
        else:
            self._nodes.append(_Node(indices, backward))
            out = Var(value, len(self._nodes) - 1)
        self.output = out
        return out

    # --- операции ---

    def linear(self, x: Var, weight: Var, bias: Optional[Var] = None) -> Var:
        """y = x·Wᵀ + b; x: (n, in), W: (out, in), b: (out,)"""
        if x.value.ndim != 2 or x.value.shape[1] != weight.value.shape[1]:
            raise DimensionError(f"linear: input shape {x.value.shape} does not match weight {weight.value.shape}")
        xv, wv = x.value, weight.value
        y = xv @ wv.T
        if bias is not None:
            y = y + bias.value
            return self._emit(y, (x, weight, bias),
                              lambda g: (g @ wv, g.T @ xv, g.sum(axis=0)))
        return self._emit(y, (x, weight), lambda g: (g @ wv, g.T @ xv))

    def tanh(self, x: Var) -> Var:
        y = np.tanh(x.value)
        return self._emit(y, (x,), lambda g: (g * (1.0 - y * y),))

    def add(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"add: shapes {a.value.shape} and {b.value.shape} differ")
        return self._emit(a.value + b.value, (a, b), lambda g: (g, g))

    def mul(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"mul: shapes {a.value.shape} and {b.value.shape} differ")
        av, bv = a.value, b.value
        return self._emit(av * bv, (a, b), lambda g: (g * bv, g * av))

    def add_scalar(self, a: Var, scalar: Var) -> Var:
        """a + s, где s - параметр формы (1,)"""
        shape = scalar.value.shape
        return self._emit(a.value + scalar.value[0], (a, scalar),
                          lambda g: (g, np.full(shape, g.sum())))

    def mean(self, items: Sequence[Var]) -> Var:
        """
        Поэлементное среднее. Слагаемые сортируются по каждой координате,
        поэтому результат не зависит от порядка items
        """
        k = len(items)
        if k == 0:
            raise DimensionError("mean of an empty list; use zeros explicitly")
        stacked = np.stack([item.value for item in items])
        value = np.sort(stacked, axis=0).sum(axis=0) / k
        return self._emit(value, tuple(items), lambda g: tuple(g / k for _ in range(k)))

    def concat(self, items: Sequence[Var], axis: int = 1) -> Var:
        values = [item.value for item in items]
        sizes = [v.shape[axis] for v in values]
        cuts = np.cumsum(sizes)[:-1]
        return self._emit(np.concatenate(values, axis=axis), tuple(items),
                          lambda g: tuple(np.split(g, cuts, axis=axis)))

    def gather_rows(self, a: Var, rows: np.ndarray) -> Var:
        rows = np.asarray(rows, dtype=np.intp)
        shape = a.value.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, rows, g)
            return (full,)

        return self._emit(a.value[rows], (a,), backward)

    def rowdot(self, a: Var, b: Var) -> Var:
        """Построчное скалярное произведение: (n, p)·(n, p) -> (n, 1)"""
        if a.value.shape != b.value.shape:
            raise DimensionError(f"rowdot: shapes {a.value.shape} and {b.value.shape} differ")
        av, bv = a.value, b.value
        return self._emit(np.sum(av * bv, axis=1, keepdims=True), (a, b),
                          lambda g: (g * bv, g * av))

    # --- обратный проход ---

    def backward(self, output_gradient, output: Optional[Var] = None) -> np.ndarray:
        """
        Градиент по плоскому вектору параметров.

        Args:
            output_gradient: Градиент по выходу (та же форма, что output.value)
            output: Выход; по умолчанию - результат последней операции
        """
        out = output if output is not None else self.output
        if not self._nodes or out is None or out.index is None:
            raise TapeError("backward called without a recorded forward pass")
        seed = np.asarray(output_gradient, dtype=np.float64)
        if seed.size != out.value.size:
            raise DimensionError(f"output gradient has {seed.size} entries, output has {out.value.size}")
        grads: List[Optional[np.ndarray]] = [None] * (out.index + 1)
        grads[out.index] = seed.reshape(out.value.shape)
        flat = np.zeros(self.store.size)
        for i in range(out.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            if node.param is not None:
                offset, size = node.param
                flat[offset:offset + size] += g.reshape(-1)
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if parent is None:
                    continue
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        return flat
