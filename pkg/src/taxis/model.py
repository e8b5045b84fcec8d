"""Closed-form model ingredients.

Sensitivities and the taxis coefficient ``c = chi * u``, its compactly supported
regularisation ``c_k``, the cut-offs ``(n - u)_+`` and ``(l - v)_+``, the coupled
functional ``F = (M0 + ubar^a) vbar^b`` with its derivatives, the discriminant of
the gradient quadratic form, the threshold ``M*`` and the B-coefficients.

Everything here is vectorised over numpy arrays.  Functions that only need the
functional parameters take any object with attributes ``a, b, n, l, M0`` (a
:class:`ModelSpec` or the looser :class:`FunctionalParams`).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import RectBivariateSpline

SigmaFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

SENSITIVITY_KINDS = ("constant", "rational", "tabulated")


def cut_pow(x, p: float):
    """``x**p`` on ``x > 0`` and exactly zero elsewhere, for every ``p >= 0``.

    Powers of cut-offs vanish outside the support of the cut-off, including
    ``p == 0``.
    """
    x = np.asarray(x, dtype=float)
    if p == 0:
        return (x > 0).astype(float)
    if p < 0:
        pos = x > 0
        return np.where(pos, np.power(np.where(pos, x, 1.0), p), 0.0)
    x = np.maximum(x, 0.0)
    whole, frac = divmod(p, 1.0)
    if whole <= 8 and frac in (0.0, 0.5):
        # repeated products are much cheaper than pow() and exact for integer exponents
        out = np.sqrt(x) if frac else np.ones_like(x)
        for _ in range(int(whole)):
            out = out * x
        return out
    return np.power(x, p)


def cutoff(x, threshold):
    """``(threshold - x)_+``."""
    return np.maximum(np.asarray(threshold, dtype=float) - np.asarray(x, dtype=float), 0.0)


@dataclass(frozen=True)
class Sensitivity:
    """Chemotactic sensitivity ``chi(u, v)``.

    Kinds and their parameter lists:

    * ``constant``: ``(chi0,)``
    * ``rational``: ``(chi0, alpha, beta)`` giving ``chi0 / ((1 + alpha u)(1 + beta v))``
      with ``alpha, beta >= 0``
    * ``tabulated``: ``(nu, nv, u_1..u_nu, v_1..v_nv, chi_11..chi_nu,nv)`` with the
      table row-major in ``u``; bicubic interpolation, clamped to the table's value
      range and held constant outside the tabulated box
    """

    kind: str
    params: tuple[float, ...]
    _spline: Optional[RectBivariateSpline] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if self.kind == "constant":
            if len(params) != 1:
                raise ValueError("constant sensitivity takes one parameter (chi0)")
        elif self.kind == "rational":
            if len(params) != 3:
                raise ValueError("rational sensitivity takes (chi0, alpha, beta)")
            if params[1] < 0 or params[2] < 0:
                raise ValueError("rational sensitivity needs alpha, beta >= 0")
        elif self.kind == "tabulated":
            nu, nv, us, vs, table = self._unpack()
            if np.any(np.diff(us) <= 0) or np.any(np.diff(vs) <= 0):
                raise ValueError("tabulated nodes must be strictly increasing")
            if nu < 4 or nv < 4:
                raise ValueError("bicubic tabulation needs at least 4 nodes per axis")
            if np.any(table < 0):
                raise ValueError("tabulated sensitivity must be nonnegative")
            object.__setattr__(self, "_spline", RectBivariateSpline(us, vs, table, kx=3, ky=3, s=0))
        else:
            raise ValueError(f"unknown sensitivity kind {self.kind!r}; expected one of {SENSITIVITY_KINDS}")
        if not all(np.isfinite(params)):
            raise ValueError("sensitivity parameters must be finite")

    def _unpack(self):
        p = self.params
        if len(p) < 2:
            raise ValueError("tabulated sensitivity needs (nu, nv, nodes..., values...)")
        nu, nv = int(p[0]), int(p[1])
        if len(p) != 2 + nu + nv + nu * nv:
            raise ValueError("tabulated sensitivity parameter count does not match (nu, nv)")
        us = np.array(p[2:2 + nu])
        vs = np.array(p[2 + nu:2 + nu + nv])
        table = np.array(p[2 + nu + nv:]).reshape(nu, nv)
        return nu, nv, us, vs, table

    @classmethod
    def constant(cls, chi0: float) -> "Sensitivity":
        return cls("constant", (chi0,))

    @classmethod
    def rational(cls, chi0: float, alpha: float, beta: float) -> "Sensitivity":
        return cls("rational", (chi0, alpha, beta))

    @classmethod
    def tabulated(cls, u_nodes: Sequence[float], v_nodes: Sequence[float], table) -> "Sensitivity":
        table = np.asarray(table, dtype=float)
        params = (len(u_nodes), len(v_nodes), *u_nodes, *v_nodes, *table.ravel())
        return cls("tabulated", params)

    def _table_eval(self, u, v, du=0, dv=0):
        _, _, us, vs, table = self._unpack()
        uc = np.clip(u, us[0], us[-1])
        vc = np.clip(v, vs[0], vs[-1])
        val = self._spline.ev(uc, vc)
        if du == 0 and dv == 0:
            return np.clip(val, table.min(), table.max())
        d = self._spline.ev(uc, vc, dx=du, dy=dv)
        # zero slope wherever the value is clamped or the argument is held constant
        inside = (val > table.min()) & (val < table.max())
        if du:
            inside &= (u > us[0]) & (u < us[-1])
        if dv:
            inside &= (v > vs[0]) & (v < vs[-1])
        return np.where(inside, d, 0.0)

    def __call__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(u, v).shape, self.params[0])
        if self.kind == "rational":
            chi0, alpha, beta = self.params
            return chi0 / ((1.0 + alpha * u) * (1.0 + beta * v))
        return self._table_eval(u, v)

    def partials(self, u, v):
        """``(d chi / du, d chi / dv)``."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = np.broadcast(u, v).shape
        if self.kind == "constant":
            return np.zeros(shape), np.zeros(shape)
        if self.kind == "rational":
            chi0, alpha, beta = self.params
            du_ = 1.0 + alpha * u
            dv_ = 1.0 + beta * v
            return -chi0 * alpha / (du_ ** 2 * dv_), -chi0 * beta / (du_ * dv_ ** 2)
        return self._table_eval(u, v, du=1), self._table_eval(u, v, dv=1)

    def sup_abs(self) -> float:
        """Upper bound of ``|chi|`` over the nonnegative quadrant."""
        if self.kind in ("constant", "rational"):
            return abs(self.params[0])
        return float(self._unpack()[4].max())


@dataclass(frozen=True)
class FunctionalParams:
    """Parameters of the coupled functional without the ``a, b > 2`` guard."""

    a: float
    b: float
    n: float
    l: float
    M0: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    """Full model: sensitivity, functional parameters and regularisation.

    ``M0=None`` resolves to ``m_star + 1`` with ``sigma = c_k``; ``k=None``
    resolves to ``4 * max(n, l)``.
    """

    chi: Sensitivity
    a: float = 3.0
    b: float = 3.0
    n: int = 1
    l: int = 1
    M0: Optional[float] = None
    k: Optional[int] = None
    plateau_width: float = 1.0

    def __post_init__(self):
        problems = validate_model_values(self.a, self.b, self.n, self.l, self.M0, self.k, self.plateau_width)
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "l", int(self.l))
        if self.k is None:
            object.__setattr__(self, "k", 4 * max(self.n, self.l))
        object.__setattr__(self, "k", int(self.k))
        if self.M0 is None:
            object.__setattr__(self, "M0", m_star(self) + 1.0)
        object.__setattr__(self, "M0", float(self.M0))

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def c(self, u, v):
        return c_eval(self, u, v)

    def c_k(self, u, v):
        return c_regularized(self, u, v)


def validate_model_values(a, b, n, l, M0, k, plateau_width) -> list[str]:
    """Every violated model constraint, as messages."""
    problems = []
    if not a > 2:
        problems.append(f"a = {a} violates the requirement a, b > 2")
    if not b > 2:
        problems.append(f"b = {b} violates the requirement a, b > 2")
    for name, val in (("n", n), ("l", l)):
        if int(val) != val or val < 1:
            problems.append(f"{name} = {val} must be a positive integer")
    if M0 is not None and not M0 >= 0:
        problems.append(f"M0 = {M0} must be nonnegative")
    if k is not None and (int(k) != k or k < 1):
        problems.append(f"k = {k} must be a positive integer")
    if not plateau_width > 0:
        problems.append(f"plateau_width = {plateau_width} must be positive")
    return problems


# ---------------------------------------------------------------------------
# taxis coefficient and its regularisation


def _check_nonneg(u, v):
    if np.any(np.asarray(u) < 0) or np.any(np.asarray(v) < 0):
        raise ValueError("c is only defined for u, v >= 0")


def c_eval(spec: ModelSpec, u, v):
    """``c(u, v) = chi(u, v) * u``."""
    _check_nonneg(u, v)
    u = np.asarray(u, dtype=float)
    return spec.chi(u, v) * u


def plateau(x, k: float, width: float):
    """Quintic taper: 1 on ``[0, k]``, 0 on ``[k + width, inf)``, C^2 in between."""
    x = np.asarray(x, dtype=float)
    if x.size and x.max() <= k:
        return np.ones(x.shape)
    s = np.clip((x - k) / width, 0.0, 1.0)
    return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def plateau_slope(x, k: float, width: float):
    s = np.clip((np.asarray(x, dtype=float) - k) / width, 0.0, 1.0)
    return -30.0 * (s * (1.0 - s)) ** 2 / width


def c_regularized(spec: ModelSpec, u, v):
    """``c_k(u, v) = zeta_k(u) zeta_k(v) c(u, v)``; equals ``c`` exactly on ``[0, k]^2``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    k, w = spec.k, spec.plateau_width
    if spec.chi.kind == "constant":
        out = spec.chi.params[0] * u
    else:
        out = spec.chi(u, v) * u
    if u.size and u.max() > k:
        out = out * plateau(u, k, w)
    if v.size and v.max() > k:
        out = out * plateau(v, k, w)
    shape = np.broadcast_shapes(u.shape, v.shape)
    return out if out.shape == shape else np.broadcast_to(out, shape).copy()


def c_partials(spec: ModelSpec, u, v, regularized: bool = True):
    """``(dc/du, dc/dv)`` of ``c`` or of ``c_k``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    chi = spec.chi(u, v)
    chi_u, chi_v = spec.chi.partials(u, v)
    cu = chi + u * chi_u
    cv = u * chi_v
    if not regularized:
        return cu, cv
    k, w = spec.k, spec.plateau_width
    zu, zv = plateau(u, k, w), plateau(v, k, w)
    c = chi * u
    return (zv * (zu * cu + plateau_slope(u, k, w) * c),
            zu * (zv * cv + plateau_slope(v, k, w) * c))


def default_sigma(spec) -> SigmaFn:
    """The taxis coefficient the threshold is taken for: ``c_k`` of a model spec."""
    if isinstance(spec, ModelSpec):
        return lambda u, v: c_regularized(spec, u, v)
    raise TypeError("sigma must be given explicitly for bare functional parameters")


# ---------------------------------------------------------------------------
# coupled functional


def f_eval(p, u, v):
    """``F(u, v) = (M0 + ubar^a) vbar^b``."""
    ub, vb = cutoff(u, p.n), cutoff(v, p.l)
    return (p.M0 + cut_pow(ub, p.a)) * cut_pow(vb, p.b)


def f_derivs(p, u, v):
    """``(F_u, F_v, F_uu, F_uv, F_vv)`` from the closed forms."""
    a, b, M0 = p.a, p.b, p.M0
    ub, vb = cutoff(u, p.n), cutoff(v, p.l)
    G = M0 + cut_pow(ub, a)
    Fu = -a * cut_pow(ub, a - 1) * cut_pow(vb, b)
    Fv = -b * G * cut_pow(vb, b - 1)
    Fuu = a * (a - 1) * cut_pow(ub, a - 2) * cut_pow(vb, b)
    Fuv = a * b * cut_pow(ub, a - 1) * cut_pow(vb, b - 1)
    Fvv = b * (b - 1) * G * cut_pow(vb, b - 2)
    return Fu, Fv, Fuu, Fuv, Fvv


# ---------------------------------------------------------------------------
# threshold, discriminant, coefficients


def _mstar_integrand(p, sigma: SigmaFn, u, v):
    a, b = p.a, p.b
    ub, vb = cutoff(u, p.n), cutoff(v, p.l)
    s = np.asarray(sigma(u, v), dtype=float)
    return ((a - 1) ** 2 / b ** 2) * s ** 2 * cut_pow(ub, a - 2) * vb ** 2 \
        + 4.0 * ((a + b - 1) / (a * b)) * cut_pow(ub, a)


def mstar_prefactor(p) -> float:
    return 0.25 * p.a * p.b / ((p.a - 1) * (p.b - 1))


def mstar_grid_max(p, sigma: SigmaFn, resolution: int) -> float:
    """Maximum of the threshold integrand on a ``(resolution+1)^2`` node grid."""
    us = np.linspace(0.0, p.n, resolution + 1)
    vs = np.linspace(0.0, p.l, resolution + 1)
    U, V = np.meshgrid(us, vs, indexing="ij")
    return float(np.max(_mstar_integrand(p, sigma, U, V)))


def m_star(p, sigma: Optional[SigmaFn] = None, resolution: int = 256, polish: int = 6) -> float:
    """Threshold ``M*[sigma](n, l)``.

    The maximum over ``[0, n] x [0, l]`` is taken on a node grid (corners and
    edges included) and the best ``polish`` grid points are refined by bounded
    quasi-Newton ascent; the larger value wins.
    """
    if sigma is None:
        sigma = default_sigma(p)
    us = np.linspace(0.0, p.n, resolution + 1)
    vs = np.linspace(0.0, p.l, resolution + 1)
    U, V = np.meshgrid(us, vs, indexing="ij")
    G = _mstar_integrand(p, sigma, U, V)
    best = float(np.max(G))
    flat = np.argsort(G, axis=None)[::-1][:polish]

    def neg(x):
        return -float(_mstar_integrand(p, sigma, np.array(x[0]), np.array(x[1])))

    for idx in flat:
        i, j = np.unravel_index(idx, G.shape)
        res = optimize.minimize(neg, x0=[U[i, j], V[i, j]], method="L-BFGS-B",
                                bounds=[(0.0, float(p.n)), (0.0, float(p.l))],
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200})
        if np.all(np.isfinite(res.x)):
            best = max(best, -neg(res.x))
    return mstar_prefactor(p) * best


def discriminant(p, sigma: SigmaFn, u, v):
    """Discriminant of the gradient quadratic form in the evolution identity of ``F``."""
    a, b = p.a, p.b
    return _mstar_integrand(p, sigma, u, v) - 4.0 * ((a - 1) * (b - 1) / (a * b)) * p.M0


@dataclass
class CoefficientBundle:
    B1: np.ndarray
    B2: np.ndarray
    B4: np.ndarray
    Bnew: np.ndarray
    B5: np.ndarray
    D: np.ndarray


def b1_coefficient(p, sigma_values, u, v) -> np.ndarray:
    """``B1`` alone, from precomputed ``sigma(u, v)`` values."""
    a, b = p.a, p.b
    ub, vb = cutoff(u, p.n), cutoff(v, p.l)
    return -cut_pow(ub, a / 2) + (a / (2 * (a - 1))) / b * cut_pow(ub, a / 2 - 1) * (2 * b * ub - (a - 1) * sigma_values * vb)


def b_coefficients(p, sigma: SigmaFn, u, v, mstar: Optional[float] = None) -> CoefficientBundle:
    if mstar is None:
        mstar = m_star(p, sigma)
    a, b, M0 = p.a, p.b, p.M0
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ub, vb = cutoff(u, p.n), cutoff(v, p.l)
    s = np.asarray(sigma(u, v), dtype=float)
    G = M0 + cut_pow(ub, a)
    D = discriminant(p, sigma, u, v)
    B1 = b1_coefficient(p, s, u, v)
    B2 = -(a / (a - 1)) * D - 4.0 * ((b - 1) / b) * (M0 - mstar)
    B4 = -cut_pow(ub, a) + (b * G - a * s * cut_pow(ub, a - 1) * vb) / b
    B5 = b * G * cut_pow(vb, b - 1)
    Bnew = B5 * v
    return CoefficientBundle(B1=B1, B2=B2, B4=B4, Bnew=Bnew, B5=B5, D=D)


def bnew_bound(p) -> float:
    """Supremum of ``Bnew`` over the quadrant (used as the source bound of ``int F``)."""
    b, l = p.b, float(p.l)
    # max of (l - v)^(b-1) v sits at v = l / b
    vmax = l / b
    return b * (p.M0 + float(p.n) ** p.a) * (l - vmax) ** (b - 1) * vmax


def spec_fields(spec: ModelSpec) -> dict[str, str]:
    """Text form of every model field, with floats in round-trip ``repr``."""
    return {
        "chi": spec.chi.kind,
        "chi_params": ", ".join(repr(p) for p in spec.chi.params),
        "a": repr(float(spec.a)),
        "b": repr(float(spec.b)),
        "n": str(spec.n),
        "l": str(spec.l),
        "M": repr(float(spec.M0)),
        "k": str(spec.k),
        "plateau_width": repr(float(spec.plateau_width)),
    }


def spec_from_fields(fields: dict[str, str]) -> ModelSpec:
    """Inverse of :func:`spec_fields`."""
    params = [float(x) for x in fields["chi_params"].split(",") if x.strip()]
    return ModelSpec(chi=Sensitivity(fields["chi"], tuple(params)), a=float(fields["a"]), b=float(fields["b"]),
                     n=int(fields["n"]), l=int(fields["l"]), M0=float(fields["M"]), k=int(fields["k"]),
                     plateau_width=float(fields["plateau_width"]))
