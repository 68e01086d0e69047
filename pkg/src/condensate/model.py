"""Rate specification and closed-form scalar functions of the limit model.

Everything here is a pure function of immutable inputs. Control states ``y``
are plain float arrays of length ``A`` (fractions of sites holding
``0..A-1`` particles); the fraction at the threshold, ``y_A``, is always
implied as ``1 - sum(y)``. Functions that take ``y`` accept a leading batch
dimension.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DegenerateGamma",
    "RateSpec",
    "ModelParams",
    "as_control_state",
    "full_occupation",
    "u1",
    "u2",
    "gamma_of_y",
    "theta_of_y",
    "drift_b",
    "beta_of_y",
    "beta_bar",
    "fixed_point_ybar",
    "rho_crit",
    "gamma_closed_form_A1",
]


class DegenerateGamma(ValueError):
    """beta is undefined where gamma(y) = 0; use :func:`beta_bar` there."""


def _parse_real(value) -> float:
    # accepts "p/q" strings so configs can state rationals exactly
    if isinstance(value, str):
        return float(Fraction(value))
    return float(value)


@dataclass(frozen=True)
class RateSpec:
    """Two-phase jump-rate family.

    ``q`` holds the slow send rates ``q_1..q_A`` (``q_0 = 0`` is implicit) and
    ``r`` the slow target rates ``r_0..r_A``. When ``theta_cap`` is set the
    rates are the leading-example representative (slow rates ``Theta/L`` and a
    ``Theta/L`` perturbation on every target rate); otherwise the exact
    representative ``q_n/L``, ``r_n/L``, ``n - A`` is used.
    """

    A: int
    q: tuple = ()
    r: tuple = ()
    zeta_scale: float = 0.0
    theta_cap: Optional[float] = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        if self.A < 0 or int(self.A) != self.A:
            raise ValueError(f"threshold A must be a non-negative integer, got {self.A}")
        object.__setattr__(self, "A", int(self.A))
        if len(self.q) != self.A or len(self.r) != self.A + 1:
            raise ValueError(
                f"need len(q) == A and len(r) == A + 1, got {len(self.q)}, {len(self.r)} for A={self.A}"
            )
        if self.zeta_scale < 0:
            raise ValueError("zeta_scale must be non-negative")
        if self.check:
            if self.r[0] <= 0 and (self.A > 0 or self.theta_cap is not None):
                raise ValueError("r_0 must be positive")
            for k in range(1, self.A + 1):
                if not self.r[k] >= self.q[k - 1] > 0:
                    raise ValueError(f"need r_k >= q_k > 0 at k={k}")

    @classmethod
    def leading_example(cls, A: int, theta: float) -> "RateSpec":
        """Rates ``(n-A)1{n>A} + Theta/L 1{0<n<=A}`` and ``(n-A)1{n>A} + Theta/L``."""
        if theta <= 0:
            raise ValueError("theta must be positive")
        return cls(A=A, q=(theta,) * A, r=(theta,) * (A + 1), zeta_scale=theta, theta_cap=theta)

    @property
    def q_full(self) -> np.ndarray:
        """``q_0..q_A`` with ``q_0 = 0``."""
        return np.array((0.0,) + self.q)

    @property
    def r_full(self) -> np.ndarray:
        return np.array(self.r)

    @property
    def q_max(self) -> float:
        return max((0.0,) + self.q)

    @property
    def q_min(self) -> float:
        return min(self.q) if self.q else float("nan")

    @property
    def r_max(self) -> float:
        return max(self.r)

    @property
    def r_min(self) -> float:
        return min(self.r)

    @property
    def is_leading(self) -> bool:
        return self.theta_cap is not None

    def zeta(self, L: int) -> float:
        return self.zeta_scale / L

    def slow_rates(self, L: int) -> tuple[np.ndarray, np.ndarray]:
        """``(u1(0..A), u2(0..A))`` at system size ``L``."""
        if self.is_leading:
            s1 = np.full(self.A + 1, self.theta_cap / L)
            s1[0] = 0.0
            s2 = np.full(self.A + 1, self.theta_cap / L)
            return s1, s2
        return self.q_full / L, self.r_full / L

    def fast_offsets(self, L: int) -> tuple[float, float]:
        """Constant added to ``n - A`` on fast sites, for ``u1`` and ``u2``."""
        if self.is_leading:
            return 0.0, self.theta_cap / L
        return 0.0, 0.0

    def u1(self, L: int, n):
        return u1(self, L, n)

    def u2(self, L: int, n):
        return u2(self, L, n)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = {"A": self.A, "q": list(self.q), "r": list(self.r), "zeta_scale": self.zeta_scale}
        if self.theta_cap is not None:
            d["theta"] = self.theta_cap
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateSpec":
        A = int(d["A"])
        theta = d.get("theta")
        if theta is not None and "q" not in d and "r" not in d:
            return cls.leading_example(A, _parse_real(theta))
        return cls(
            A=A,
            q=tuple(_parse_real(v) for v in d.get("q", ())),
            r=tuple(_parse_real(v) for v in d.get("r", ())),
            zeta_scale=_parse_real(d.get("zeta_scale", 0.0)),
            theta_cap=None if theta is None else _parse_real(theta),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RateSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ModelParams:
    spec: RateSpec
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("density rho must be positive")

    @property
    def A(self) -> int:
        return self.spec.A

    @property
    def rho_c(self) -> float:
        return rho_crit(self.spec)

    @property
    def gamma_bar(self) -> float:
        """Stationary fast-phase mass ``(1 - rho_c/rho)_+``."""
        return max(1.0 - self.rho_c / self.rho, 0.0)


def u1(spec: RateSpec, L: int, n):
    """Source rate of a site holding ``n`` particles."""
    n = np.asarray(n)
    s1, _ = spec.slow_rates(L)
    c1, _ = spec.fast_offsets(L)
    slow = s1[np.minimum(n, spec.A)]
    out = np.where(n > spec.A, (n - spec.A) + c1, slow)
    return out[()] if out.ndim == 0 else out


def u2(spec: RateSpec, L: int, n):
    """Target rate of a site holding ``n`` particles."""
    n = np.asarray(n)
    _, s2 = spec.slow_rates(L)
    _, c2 = spec.fast_offsets(L)
    slow = s2[np.minimum(n, spec.A)]
    out = np.where(n > spec.A, (n - spec.A) + c2, slow)
    return out[()] if out.ndim == 0 else out


def as_control_state(y, A: int, tol: float = 1e-12) -> np.ndarray:
    """Validate ``y`` as a point of S_Y and return it as a float array."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (A,):
        raise ValueError(f"control state must have trailing length A={A}, got shape {y.shape}")
    if np.any(y < -tol) or np.any(y > 1 + tol) or np.any(y.sum(axis=-1) > 1 + tol):
        raise ValueError("control state outside the simplex S_Y")
    return y


def full_occupation(y) -> np.ndarray:
    """Append the implied ``y_A = 1 - sum(y)``."""
    y = np.asarray(y, dtype=float)
    yA = 1.0 - y.sum(axis=-1, keepdims=True)
    return np.concatenate([y, yA], axis=-1)


def _gamma_raw(params: ModelParams, y) -> np.ndarray:
    yf = full_occupation(y)
    k = np.arange(params.A + 1)
    return 1.0 - (yf @ k) / params.rho


def gamma_of_y(params: ModelParams, y):
    """Relative fast-phase mass ``(1 - sum_k k y_k / rho)_+``."""
    return np.maximum(_gamma_raw(params, y), 0.0)


def theta_of_y(params: ModelParams, y):
    """``sum_{k=0}^{A} (r_k - q_k) y_k``."""
    spec = params.spec
    return full_occupation(y) @ (spec.r_full - spec.q_full)


def drift_b(params: ModelParams, y) -> np.ndarray:
    """Control drift ``b_k(y)``, ``k = 0..A-1``."""
    spec, A = params.spec, params.A
    y = np.asarray(y, dtype=float)
    if A == 0:
        return np.zeros(y.shape)
    yf = full_occupation(y)
    q, r = spec.q_full, spec.r_full
    up = q[1:] * yf[..., 1:]
    down = np.zeros_like(y)
    down[..., 1:] = r[: A - 1] * yf[..., : A - 1]
    out = (q[:A] + r[:A]) * yf[..., :A]
    g = gamma_of_y(params, y)
    return params.rho * np.asarray(g)[..., None] * (up + down - out)


def beta_of_y(params: ModelParams, y):
    """``theta(y) + sum_k b_k(y) d_k gamma(y) / gamma(y)`` on supp gamma."""
    g = np.asarray(gamma_of_y(params, y))
    if np.any(g <= 0):
        raise DegenerateGamma("beta is undefined where gamma(y) = 0")
    A = params.A
    dgamma = (A - np.arange(A)) / params.rho
    b = drift_b(params, y)
    return theta_of_y(params, y) + (b @ dgamma) / g


def beta_bar(params: ModelParams, y):
    """Continuous extension ``r_A y_A`` of beta to all of S_Y."""
    return params.spec.r[-1] * full_occupation(y)[..., -1]


def fixed_point_ybar(spec: RateSpec) -> np.ndarray:
    """Product-form fixed point ``ybar_k ~ prod_{l<=k} r_{l-1}/q_l``, ``k = 0..A``."""
    if spec.A < 1:
        raise ValueError("fixed point requires A >= 1")
    q, r = spec.q_full, spec.r_full
    w = np.concatenate([[1.0], np.cumprod(r[:-1] / q[1:])])
    return w / w.sum()


def rho_crit(spec: RateSpec) -> float:
    """Critical density: the mean of ``ybar`` as a law on ``{0..A}``."""
    if spec.A == 0:
        return 0.0
    ybar = fixed_point_ybar(spec)
    return float(ybar @ np.arange(spec.A + 1))


def gamma_closed_form_A1(theta: float, rho: float, t, gamma0: float = 1.0):
    """Fast-phase mass of the leading example with ``A = 1``.

    With ``gamma0 = 1`` this is ``(1 - 2 rho) / (exp(theta t (1 - 2 rho)) - 2 rho)``.
    Other starting masses solve the same logistic equation
    ``gamma' = theta gamma (2 rho (1 - gamma) - 1)``.
    """
    t = np.asarray(t, dtype=float)
    a = 2.0 * rho - 1.0
    if abs(a) < 1e-8:
        out = gamma0 / (1.0 + theta * gamma0 * t)
    else:
        with np.errstate(over="ignore"):
            out = a * gamma0 / (2.0 * rho * gamma0 + (a - 2.0 * rho * gamma0) * np.exp(-theta * a * t))
    return out[()] if out.ndim == 0 else out
