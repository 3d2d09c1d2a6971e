"""
Polynomial homogeneous free energies.

``f(u) = sum_{i=0}^{2r-1} a_i u^i`` is the derivative of
``F(u) = sum_{i=0}^{2r} b_i u^i``; the coefficients are linked through
``i b_i = a_{i-1}`` and the leading coefficient ``a_{2r-1} = 2r b_{2r}`` is
positive. ``b_0`` is a free additive constant of F.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import FreeEnergyError

ArrayLike = Union[float, np.ndarray]

LINKAGE_RTOL = 1e-12


@dataclass(frozen=True)
class FreeEnergy:
    """Coefficients of f and F together with lambda and the capillary width."""

    r: int
    a: tuple
    b: tuple
    lam: float = 1.0
    eta: Optional[float] = None

    def f(self, u: ArrayLike) -> ArrayLike:
        return eval_f(self, u)

    def f_prime(self, u: ArrayLike) -> ArrayLike:
        return eval_f_prime(self, u)

    def F(self, u: ArrayLike) -> ArrayLike:
        return eval_F(self, u)

    @classmethod
    def from_coefficients(
        cls,
        a: Sequence[float],
        lam: float = 1.0,
        eta: Optional[float] = None,
        b0: float = 0.0,
    ) -> "FreeEnergy":
        """Build F from the coefficients of f via ``b_i = a_{i-1} / i``.

        Raises:
            FreeEnergyError: ``a`` does not have even length >= 4, or the
                resulting energy violates the structural assumptions.
        """
        a = tuple(float(c) for c in a)
        if len(a) < 4 or len(a) % 2:
            raise FreeEnergyError(
                f"f needs 2r coefficients with r >= 2, got {len(a)}"
            )
        b = (float(b0),) + tuple(a[i - 1] / i for i in range(1, len(a) + 1))
        fe = cls(r=len(a) // 2, a=a, b=b, lam=float(lam), eta=eta)
        problem = validate_pf(fe)
        if problem:
            raise FreeEnergyError(problem)
        return fe


def double_well(eta: float, lam: float = 1.0) -> FreeEnergy:
    """``F(u) = (u^2 - 1)^2 / (4 eta^2)``, ``f(u) = (u^3 - u) / eta^2``.

    Raises:
        FreeEnergyError: ``eta <= 0``.
    """
    if not eta > 0:
        raise FreeEnergyError(f"capillary width eta must be positive, got {eta}")
    s = 1.0 / eta**2
    return FreeEnergy(
        r=2,
        a=(0.0, -s, 0.0, s),
        b=(0.25 * s, 0.0, -0.5 * s, 0.0, 0.25 * s),
        lam=float(lam),
        eta=float(eta),
    )


def validate_pf(fe: FreeEnergy) -> Optional[str]:
    """Return the first structural violation of ``fe``, or None.

    Checks the positive leading coefficient, the ``i b_i = a_{i-1}`` linkage
    and ``f(0) = 0``, in that order.
    """
    if fe.r < 2:
        return f"order r must be >= 2, got {fe.r}"
    if len(fe.a) != 2 * fe.r or len(fe.b) != 2 * fe.r + 1:
        return (
            f"expected {2 * fe.r} coefficients for f and {2 * fe.r + 1} for F, "
            f"got {len(fe.a)} and {len(fe.b)}"
        )
    lead = fe.a[-1]
    if not lead > 0 or not fe.b[-1] > 0:
        return f"leading coefficient not positive (a_{2 * fe.r - 1} = {lead:g})"
    for i in range(2, 2 * fe.r + 1):
        expected = fe.a[i - 1]
        actual = i * fe.b[i]
        if abs(actual - expected) > LINKAGE_RTOL * max(abs(expected), abs(actual), 1.0):
            return (
                f"coefficient linkage broken: {i} * b_{i} = {actual:g} "
                f"!= a_{i - 1} = {expected:g}"
            )
    if fe.a[0] != 0.0 or fe.b[1] != 0.0:
        return f"f(0) must vanish, got a_0 = {fe.a[0]:g}, b_1 = {fe.b[1]:g}"
    if not fe.lam > 0:
        return f"lambda must be positive, got {fe.lam:g}"
    if fe.eta is not None and not fe.eta > 0:
        return f"eta must be positive, got {fe.eta:g}"
    return None


def eval_f(fe: FreeEnergy, u: ArrayLike) -> ArrayLike:
    return P.polyval(u, fe.a)


def eval_f_prime(fe: FreeEnergy, u: ArrayLike) -> ArrayLike:
    return P.polyval(u, P.polyder(fe.a))


def eval_F(fe: FreeEnergy, u: ArrayLike) -> ArrayLike:
    return P.polyval(u, fe.b)


def max_abs_f_prime(fe: FreeEnergy, bound: float = 1.2, samples: int = 241) -> float:
    """Largest |f'| over ``[-bound, bound]``, used for step-size bounds."""
    s = np.linspace(-bound, bound, samples)
    return float(np.max(np.abs(eval_f_prime(fe, s))))


def coercivity_constant(
    fe: FreeEnergy,
    s_max: float = 10.0,
    factor: Optional[float] = None,
    samples: int = 4001,
) -> float:
    """Smallest C >= 0 with ``f(s) s >= factor s^{2r} - C`` on a sampled grid.

    ``factor`` defaults to ``2r b_{2r}``.
    """
    if factor is None:
        factor = 2 * fe.r * fe.b[-1]
    s = np.linspace(-s_max, s_max, samples)
    gap = factor * s ** (2 * fe.r) - eval_f(fe, s) * s
    return float(max(0.0, gap.max()))
