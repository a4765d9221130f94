"""Utility functions on the positive half-line and their convex conjugates."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class UtilitySpec:
    """Increasing, strictly concave utility with Inada conditions.

    Use :meth:`log`, :meth:`power` or :meth:`custom` to build one.
    ``conjugate`` is ``V(y) = sup_x U(x) - x y``.
    """

    kind: str
    alpha: Optional[float] = None
    u: Callable = None
    u_prime: Callable = None
    u_prime_inverse: Callable = None
    v_conjugate: Callable = None
    u_second_fn: Optional[Callable] = None
    ae_upper: Optional[float] = None

    @classmethod
    def log(cls):
        return cls(
            kind="log",
            u=np.log,
            u_prime=lambda x: 1.0 / x,
            u_prime_inverse=lambda y: 1.0 / y,
            v_conjugate=lambda y: -np.log(y) - 1.0,
            u_second_fn=lambda x: -1.0 / x**2,
            ae_upper=0.0,
        )

    @classmethod
    def power(cls, alpha):
        a = float(alpha)
        if a == 0.0 or a >= 1.0 or not np.isfinite(a):
            raise ValueError(f"power utility needs alpha < 1 and alpha != 0, got {alpha}")
        q = a / (a - 1.0)
        return cls(
            kind="power",
            alpha=a,
            u=lambda x: x**a / a,
            u_prime=lambda x: x ** (a - 1.0),
            u_prime_inverse=lambda y: y ** (1.0 / (a - 1.0)),
            v_conjugate=lambda y: (1.0 - a) / a * y**q,
            u_second_fn=lambda x: (a - 1.0) * x ** (a - 2.0),
            ae_upper=max(a, 0.0),
        )

    @classmethod
    def custom(cls, u, u_prime, u_prime_inverse, v_conjugate, u_second=None, ae_upper=None):
        spec = cls(
            kind="custom",
            u=u,
            u_prime=u_prime,
            u_prime_inverse=u_prime_inverse,
            v_conjugate=v_conjugate,
            u_second_fn=u_second,
            ae_upper=ae_upper,
        )
        spec.check()
        return spec

    @classmethod
    def from_name(cls, name, alpha=None):
        if name == "log":
            return cls.log()
        if name == "power":
            if alpha is None:
                raise ValueError("power utility needs alpha")
            return cls.power(alpha)
        raise ValueError(f"unknown utility {name!r}; use 'log' or 'power'")

    @property
    def label(self):
        return "log" if self.kind == "log" else f"{self.kind}({self.alpha})"

    def u_second(self, x):
        if self.u_second_fn is not None:
            return self.u_second_fn(x)
        h = 1e-6 * np.maximum(np.abs(x), 1e-8)
        return (self.u_prime(x + h) - self.u_prime(x - h)) / (2 * h)

    def conjugate_prime(self, y):
        """``V'(y) = -I(y)`` with ``I`` the inverse marginal utility."""
        return -self.u_prime_inverse(y)

    def conjugate_second(self, y):
        return -1.0 / self.u_second(self.u_prime_inverse(y))

    def check(self, grid=None):
        """Monotonicity, strict concavity and Inada behaviour on a sample grid."""
        x = np.geomspace(1e-6, 1e6, 241) if grid is None else np.asarray(grid, dtype=float)
        u = self.u(x)
        du = self.u_prime(x)
        if not (np.all(np.diff(u) > 0) and np.all(du > 0)):
            raise ValueError("utility must be strictly increasing")
        if not np.all(np.diff(du) < 0):
            raise ValueError("utility must be strictly concave")
        if not (du[0] > 1e2 * du[x.size // 2] and du[-1] < 1e-2 * du[x.size // 2]):
            raise ValueError("marginal utility does not look like it satisfies the Inada conditions")
        if not np.allclose(self.u_prime_inverse(du), x, rtol=1e-6):
            raise ValueError("u_prime_inverse is not the inverse of u_prime")
        y = du[::40]
        xs = self.u_prime_inverse(y)
        if not np.allclose(self.v_conjugate(y), self.u(xs) - xs * y, rtol=1e-8, atol=1e-10):
            raise ValueError("v_conjugate does not match the Legendre transform of u")
        return self
