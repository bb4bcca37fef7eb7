"""
integrator.py - Fixed-Step Runge-Kutta Kernel

Classical 4th-order Runge-Kutta on flat numpy state vectors. The simulator
advances agent states and dynamic trigger variables jointly with this kernel
so both share one scheme and one step size.
"""
from typing import Callable

import numpy as np

Derivative = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(fn: Derivative, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """
    One RK4 step of y' = fn(t, y).

    Args:
        fn: Right-hand side, called with (time, state).
        t: Start of the step.
        y: State at t.
        h: Step size.

    Returns:
        The state at t + h.
    """
    k1 = fn(t, y)
    k2 = fn(t + h / 2, y + h / 2 * k1)
    k3 = fn(t + h / 2, y + h / 2 * k2)
    k4 = fn(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
