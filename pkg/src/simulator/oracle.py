"""
Точное решение уравнения переноса на одной трубе методом характеристик
"""
from typing import Callable, Union

from ..shared.errors import QueryError
from ..shared.models import BoundarySignal, PiecewiseConstant, VelocitySchedule

Profile = Union[PiecewiseConstant, Callable[[float], float]]


def _profile_value(initial: Profile, x: float) -> float:
    if isinstance(initial, PiecewiseConstant):
        return initial.at(x)
    return float(initial(x))


def characteristic_foot(velocity: VelocitySchedule, x: float, t: float):
    """
    Обратная трассировка характеристики dx/dt = v(t) из точки (x, t).

    Returns:
        ('boundary', t0) - характеристика выходит на x=0 в момент t0 >= 0;
        ('initial', x0) - характеристика приходит в t=0 в точке x0
    """
    remaining = x
    tau = t
    breakpoints = velocity.breakpoints
    k = velocity.interval_index(tau)
    # при tau ровно на точке излома берём интервал слева от tau
    while k > 0 and breakpoints[k] >= tau:
        k -= 1
    while tau > 0:
        start = breakpoints[k]
        speed = velocity.values[k]
        span = tau - start
        travel = speed * span
        if remaining <= travel:
            if speed == 0.0:
                return 'boundary', tau
            return 'boundary', tau - remaining / speed
        remaining -= travel
        tau = start
        k -= 1
        if k < 0:
            break
    return 'initial', remaining


def characteristics_oracle(initial: Profile, boundary: BoundarySignal, velocity: VelocitySchedule,
                           x: float, t: float, length_m: float, horizon_s: float = float('inf')) -> float:
    """
    Точная доля водорода w(x, t) на одной трубе.

    Args:
        initial: Начальный профиль w0(x) (кусочно-постоянный или функция)
        boundary: Граничный сигнал на входе x=0
        velocity: Расписание скорости
        x: Координата, м, в [0, length_m]
        t: Момент, с, в [0, horizon_s]
    """
    if not (0.0 <= x <= length_m):
        raise QueryError(f"x={x} outside [0, {length_m}]")
    if not (0.0 <= t <= horizon_s):
        raise QueryError(f"t={t} outside [0, {horizon_s}]")
    kind, where = characteristic_foot(velocity, x, t)
    if kind == 'boundary':
        return boundary.at(where)
    return _profile_value(initial, where)
