"""Closed-form step-size ceilings, constants and convergence bounds.

Notation: ``eta`` step size, ``L`` smoothness, ``c`` strong convexity,
``r`` pulling ratio, ``G`` gradient-norm bound, ``sigma2`` gradient-noise
variance bound, ``P`` workers, ``T`` iterations, ``f_gap = F(w_1) - F*``.

Step-size ceilings are roots of quadratics in ``eta`` and are written in
rationalised form, ``(-a + sqrt(a^2 + b)) / c == b / (c (a + sqrt(a^2 + b)))``,
which is algebraically identical for ``r < 1`` and stays well conditioned as
``r -> 1`` where the textbook form is 0/0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

# eta_max_strong has no finite limit at r = 1; it is evaluated this close instead.
STRONG_R_ONE_SUBSTITUTE = 1.0 - 1e-8
_ETA_SLACK = 1e-12


class DomainError(ValueError):
    """Inputs fall outside the hypothesis of the corresponding result."""


class PreconditionError(ValueError):
    """The step size exceeds the ceiling under which a bound holds."""


@dataclass(frozen=True)
class TheoryInputs:
    eta: float
    L: float
    r: float
    P: int
    T: int = 1
    c: float = 0.0
    G: float = 0.0
    sigma2: float = 0.0
    f_gap: float = 0.0

    def __post_init__(self):
        for name in ("eta", "L", "c", "r", "G", "sigma2", "f_gap"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")
        if self.c < 0 or self.G < 0 or self.sigma2 < 0 or self.f_gap < 0:
            raise ValueError("c, G, sigma2 and f_gap must be non-negative")
        if self.P < 1 or self.T < 1:
            raise ValueError("P and T must be >= 1")


def _check_Lr(L: float, r: float) -> None:
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if not 0.0 < r <= 1.0:
        raise ValueError(f"r must lie in (0, 1], got {r}")


def _q(r: float) -> float:
    """The recurring factor (1 - r)(2 - r)."""
    return (1.0 - r) * (2.0 - r)


# ---------------------------------------------------------------------------
# Step-size ceilings


def eta_max_prlc(L: float, r: float) -> float:
    """Largest fixed step for the non-convex PRLC bound; 1/(2L) at r = 1."""
    _check_Lr(L, r)
    a = 2.0 * L * r * r
    b = 32.0 * L * L * r * r * _q(r)
    # b / (16 L^2 q (a + sqrt(a^2 + b))) with the q factors cancelled.
    return 2.0 * r * r / (a + math.sqrt(a * a + b))


def eta_max_pr(L: float, r: float) -> float:
    """Largest fixed step for the PR bound (requires r >= 0.5); 1/(4L) at r = 1."""
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if not 0.5 <= r <= 1.0:
        raise DomainError(f"the PR bound needs 0.5 <= r <= 1, got r={r}")
    return 2.0 / (4.0 * L + math.sqrt(16.0 * L * L + 32.0 * L * (1.0 - r)))


def eta_max_strong(L: float, r: float, P: int) -> float:
    """Largest fixed step for the strongly convex PRLC bound.

    The expression grows without bound as ``r -> 1``; at ``r == 1`` it is
    evaluated at ``STRONG_R_ONE_SUBSTITUTE`` instead.
    """
    _check_Lr(L, r)
    if P < 1:
        raise ValueError("P must be >= 1")
    if r == 1.0:
        r = STRONG_R_ONE_SUBSTITUTE
    q = _q(r)
    return (-r * r + 2.0 * r * math.sqrt(r * r + 16.0 * P * q)) / (8.0 * P * L * q)


# ---------------------------------------------------------------------------
# Constants


def constant_A(inp: TheoryInputs) -> float:
    """Plateau constant of the non-convex PRLC bound (half the floor)."""
    eta, L, r, P = inp.eta, inp.L, inp.r, inp.P
    comp = 2.0 * eta**2 * L**2 * _q(r) * (P * inp.G**2 + 2.0 * inp.sigma2)
    return (comp + L * eta * inp.sigma2 * r * r) / (P * r * r)


def constant_B(inp: TheoryInputs) -> float:
    """Coefficient that must be non-positive for the PRLC descent argument."""
    eta, L, r, P = inp.eta, inp.L, inp.r, inp.P
    return (8.0 * eta**3 * L**2 * _q(r) + (2.0 * L * eta**2 - eta) * r * r) / (2.0 * P**2 * r * r)


def constant_D(inp: TheoryInputs) -> float:
    """Per-step additive constant of the strongly convex recursion."""
    eta, L, r, P = inp.eta, inp.L, inp.r, inp.P
    comp = 2.0 * eta**2 * L**2 * _q(r) * (eta * P**2 * inp.G**2 + 2.0 * inp.sigma2)
    return (comp + 2.0 * eta**2 * inp.sigma2 * r * r) / (P * r * r)


def constant_H(inp: TheoryInputs) -> float:
    """Coefficient that must be non-positive in the PR descent argument (r > 0.5)."""
    eta, L, r, P = inp.eta, inp.L, inp.r, inp.P
    if not r > 0.5:
        raise DomainError(f"H is defined for r > 0.5, got r={r}")
    return (2.0 * eta**3 * L**2 * (1.0 - r) / (P**2 * (2.0 * r - 1.0))
            + L * eta**2 / P**2 - eta / (2.0 * P**2))


def decomposition_constants(L: float, r: float, G: float, sigma2: float) -> tuple[float, float, float]:
    """``(C0', C1', C2')`` with ``2A == eta (C0'/P + eta (C1'/P + C2'))``."""
    _check_Lr(L, r)
    q = _q(r)
    return (2.0 * L * sigma2,
            8.0 * L * L * q * sigma2 / (r * r),
            4.0 * L * L * q * G * G / (r * r))


@dataclass(frozen=True)
class TheoryConstants:
    A: float
    B: float
    D: float
    H: Optional[float]
    C0p: float
    C1p: float
    C2p: float
    C0: Optional[float] = None
    C1: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def theory_constants(inp: TheoryInputs, C0: Optional[float] = None,
                     C1: Optional[float] = None) -> TheoryConstants:
    C0p, C1p, C2p = decomposition_constants(inp.L, inp.r, inp.G, inp.sigma2)
    return TheoryConstants(
        A=constant_A(inp),
        B=constant_B(inp),
        D=constant_D(inp),
        H=constant_H(inp) if inp.r > 0.5 else None,
        C0p=C0p, C1p=C1p, C2p=C2p, C0=C0, C1=C1,
    )


# ---------------------------------------------------------------------------
# Bounds


def _require_eta(eta: float, ceiling: float, what: str) -> None:
    if eta > ceiling * (1.0 + _ETA_SLACK):
        raise PreconditionError(f"eta={eta:.6g} exceeds the {what} ceiling {ceiling:.6g}; bound not guaranteed")


def bound_prlc_nonconvex(inp: TheoryInputs, enforce: bool = True) -> float:
    """Bound on the time-averaged squared gradient norm of PRLC."""
    if enforce:
        _require_eta(inp.eta, eta_max_prlc(inp.L, inp.r), "PRLC")
    return 2.0 * inp.f_gap / (inp.eta * inp.T) + 2.0 * constant_A(inp)


def min_T_prlc(inp: TheoryInputs) -> tuple[float, float]:
    """Minimum horizon for the tuned-step rate, and that tuned step.

    Returns ``(T_min, eta)`` where ``eta = sqrt(f_gap P / (L sigma2 T))`` uses
    ``inp.T``. In rationalised form ``T_min = f_gap P (a + sqrt(a^2+b))^2 /
    (4 sigma2 L r^4)``, whose value at ``r = 1`` is the limit ``4 f_gap L P /
    sigma2``; that is exactly the horizon at which the tuned step meets the
    ``1/(2L)`` ceiling.
    """
    if not inp.sigma2 > 0:
        raise ValueError("min_T_prlc needs sigma2 > 0")
    L, r = inp.L, inp.r
    a = 2.0 * L * r * r
    b = 32.0 * L * L * r * r * _q(r)
    root = a + math.sqrt(a * a + b)
    t_min = inp.f_gap * inp.P * root * root / (4.0 * inp.sigma2 * L * r**4)
    eta = math.sqrt(inp.f_gap * inp.P / (L * inp.sigma2 * inp.T))
    return t_min, eta


def pr_bracket(r: float, T: int) -> float:
    """The bracketed remainder of the PR bound; ``(2(1-r))^T`` via logs."""
    if not 0.5 < r <= 1.0:
        raise DomainError(f"the PR bound needs 0.5 < r <= 1, got r={r}")
    base = 2.0 * (1.0 - r)
    power = 0.0 if base == 0.0 else math.exp(T * math.log(base))
    x = 2.0 * r - 1.0
    return (1.0 - r) / x - (1.0 - r) * (1.0 - power) / (x * x * T)


def bound_pr(inp: TheoryInputs, enforce: bool = True) -> float:
    """Bound on the time-averaged squared gradient norm of PR (no compensation)."""
    if not inp.r > 0.5:
        raise DomainError(f"the PR bound is only evaluated for r > 0.5, got r={inp.r}")
    if enforce:
        _require_eta(inp.eta, eta_max_pr(inp.L, inp.r), "PR")
    eta, L, P, s2 = inp.eta, inp.L, inp.P, inp.sigma2
    return (2.0 * inp.f_gap / (eta * inp.T) + 2.0 * L * eta * s2 / P
            + 4.0 * eta**2 * L * s2 / P * pr_bracket(inp.r, inp.T))


def bound_strong(inp: TheoryInputs, t: int, enforce: bool = True) -> tuple[float, float]:
    """Optimality-gap bound after ``t`` iterations, and its plateau ``D/(eta c)``."""
    if not inp.c > 0:
        raise ValueError("the strongly convex bound needs c > 0")
    rate = inp.eta * inp.c
    if not 0.0 < rate < 1.0:
        raise ValueError(f"need 0 < eta*c < 1 for contraction, got {rate}")
    if t < 0:
        raise ValueError("t must be >= 0")
    if enforce:
        _require_eta(inp.eta, eta_max_strong(inp.L, inp.r, inp.P), "strongly convex")
    plateau = constant_D(inp) / rate
    if t == 0:
        return inp.f_gap, plateau
    return plateau + (1.0 - rate) ** t * (inp.f_gap - plateau), plateau


@dataclass(frozen=True)
class ScalabilityRow:
    P: int
    prlc_term: float
    prlc_p_dependent: float
    asgd_term: float


def scalability_compare(inp: TheoryInputs, C0: float, C1: float,
                        P_grid: Sequence[int]) -> list[ScalabilityRow]:
    """Non-vanishing bound terms of PRLC and best-case ASGD for each P."""
    if len(P_grid) == 0:
        raise ValueError("P_grid must be non-empty")
    if C0 < 0 or C1 < 0:
        raise ValueError("C0 and C1 must be non-negative")
    if any(b <= a for a, b in zip(P_grid, P_grid[1:])):
        raise ValueError("P_grid must be strictly ascending")
    C0p, C1p, C2p = decomposition_constants(inp.L, inp.r, inp.G, inp.sigma2)
    eta = inp.eta
    rows = []
    for P in P_grid:
        dep = eta * (C0p / P + eta * C1p / P)
        rows.append(ScalabilityRow(P=int(P), prlc_term=dep + eta * eta * C2p,
                                   prlc_p_dependent=dep, asgd_term=eta * (C0 + C1 * P * eta)))
    return rows
