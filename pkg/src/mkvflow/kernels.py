"""Singular interaction kernels, their grid realizations, and drifts.

The catalog covers gradient-of-potential kernels with adjustable singular
order (`RieszOrder`), derivatives of a point mass (`DiracDerivative`),
constant vectors and arbitrary grid-sampled fields.  Singular variants are
realized after heat mollification at time ``mollification_eps``.  The
convolution drift and the pointwise density-derivative (Nemytskii) drift
both carry a ``K(t) * t**kappa`` time envelope.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .grids import (
    GridSpec,
    ScalarField,
    VectorField,
    field_derivative,
    heat_apply,
)
from .norms import BallLattice, SobolevIndex, local_neg_norm

__all__ = [
    "RieszOrder",
    "DiracDerivative",
    "ConstantVector",
    "GridSampled",
    "TimeModulation",
    "KernelSpec",
    "NemytskiiSpec",
    "MollificationError",
    "realize_kernel",
    "riesz_direct",
    "drift_from_kernel",
    "nemytskii_drift",
    "nemytskii_lipschitz_check",
    "kernel_norm_study",
    "NormStudy",
    "kernel_catalog",
    "make_kernel",
]


class MollificationError(ValueError):
    """Singular kernel realized without a positive mollification time."""


@dataclass(frozen=True)
class RieszOrder:
    """Kernel ``c * z / |z|^(d + 2*n0 + eps0)`` (componentwise in c).

    ``n0 >= 1`` or ``eps0 >= 1`` makes it more singular than the classical
    inverse-power kernels.
    """

    c: tuple = (1.0,)
    n0: int = 0
    eps0: float = 0.0

    def __post_init__(self):
        if self.n0 < 0:
            raise ValueError(f"n0 must be a nonnegative integer, got {self.n0}")
        if not (0.0 <= self.eps0 < 2.0):
            raise ValueError(f"eps0 must lie in [0, 2), got {self.eps0}")

    @property
    def singular(self) -> bool:
        return True


@dataclass(frozen=True)
class DiracDerivative:
    """Derivative of order ``order`` of a unit point mass, along one axis."""

    order: int = 0
    direction: int = 0

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {self.order}")
        if self.direction not in (0, 1):
            raise ValueError(f"direction must be 0 or 1, got {self.direction}")

    @property
    def singular(self) -> bool:
        return True


@dataclass(frozen=True)
class ConstantVector:
    c: tuple = (1.0,)

    @property
    def singular(self) -> bool:
        return False


@dataclass
class GridSampled:
    field: VectorField

    @property
    def singular(self) -> bool:
        return False


@dataclass(frozen=True)
class TimeModulation:
    """Envelope ``K(t) * t**kappa`` with K tabulated, nondecreasing, >= 1."""

    kappa: float = 0.0
    table: tuple | None = None  # ((t0, K0), (t1, K1), ...) or None for K == 1

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.table is not None:
            ks = [k for _, k in self.table]
            if any(k < 1 for k in ks):
                raise ValueError("tabulated K values must be >= 1")
            if any(b < a for a, b in zip(ks, ks[1:])):
                raise ValueError("tabulated K must be nondecreasing")

    def K(self, t: float) -> float:
        if self.table is None:
            return 1.0
        ts = np.array([p[0] for p in self.table])
        ks = np.array([p[1] for p in self.table])
        return float(np.interp(t, ts, ks))

    def factor(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"time must be >= 0, got {t}")
        if t == 0.0:
            return self.K(0.0) if self.kappa == 0.0 else 0.0
        return self.K(t) * t**self.kappa


@dataclass(frozen=True)
class KernelSpec:
    variant: object
    mollification_eps: float = 0.0
    modulation: TimeModulation = field(default_factory=TimeModulation)

    def __post_init__(self):
        if self.mollification_eps < 0:
            raise ValueError("mollification_eps must be >= 0")


def default_mollification(grid: GridSpec) -> float:
    return 4.0 * grid.spacing**2


# ---------------------------------------------------------------------------
# realization


def _riesz_symbol_route(spec: RieszOrder, grid: GridSpec, eps: float):
    """Unit-amplitude grid realization of the kernel from its Fourier symbol.

    The symbol of grad(Lap^n0 (inverse-power potential)) per component is
    ``i xi_j |xi|^(2 n0 + eps0 - 2)`` up to one multiplicative constant,
    fixed afterwards by matching the direct evaluation away from the origin.
    The zero mode vanishes (odd kernel).
    """
    power = 2 * spec.n0 + spec.eps0 - 2.0
    xi = grid.freqs()
    xi_sq = grid.freq_sq()
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(xi_sq > 0, xi_sq ** (0.5 * power), 0.0)
    damp = np.exp(-0.5 * eps * xi_sq)
    comps = []
    for j in range(grid.dim):
        sym = 1j * xi[j] * radial * damp
        # inverse transform lands in displacement indexing; shift the origin
        # to the grid center to match the coordinate convention
        vals = np.fft.ifftn(sym * np.ones(grid.shape, dtype=complex)).real
        comps.append(np.fft.fftshift(vals) / grid.cell_volume)
    return comps


def riesz_direct(spec: RieszOrder, grid: GridSpec, images: int = 2000):
    """Pointwise kernel values periodized over the torus.

    Opposite images are summed in +/- pairs so the conditionally convergent
    tail (the kernel is odd) telescopes; ``images`` pairs per axis.  Values
    at the origin are set to zero (the mollified comparison never uses them).
    """
    p = grid.dim + 2 * spec.n0 + spec.eps0
    xs = grid.coords()
    L = grid.extent
    comps = [np.zeros(grid.shape) for _ in range(grid.dim)]
    if grid.dim == 1:
        x = xs[0]
        for m in range(-images, images + 1):
            z = x + m * L
            r = np.abs(z)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(r > 0, z / r**p, 0.0)
            comps[0] += vals
    else:
        xa, xb = xs
        for ma in range(-images, images + 1):
            za = xa + ma * L
            for mb in range(-images, images + 1):
                zb = xb + mb * L
                r = np.hypot(za, zb)
                with np.errstate(divide="ignore", invalid="ignore"):
                    inv = np.where(r > 0, r**-p, 0.0)
                comps[0] += za * inv
                comps[1] += zb * inv
    out = []
    for j in range(grid.dim):
        cj = spec.c[j] if j < len(spec.c) else spec.c[0]
        out.append(cj * comps[j])
    return out


def _riesz_calibration_scale(spec: RieszOrder, grid: GridSpec, eps: float,
                             raw_comps) -> float:
    """Least-squares amplitude matching symbol route to the direct values
    on an annulus clear of both the mollified core and the wrap zone."""
    n_img = 800 if grid.dim == 1 else 24
    direct = riesz_direct(RieszOrder(c=(1.0,) * grid.dim, n0=spec.n0,
                                     eps0=spec.eps0), grid, images=n_img)
    rad = grid.periodic_radius()
    r_lo = max(10.0 * math.sqrt(eps), 8.0 * grid.spacing)
    r_hi = grid.extent / 4.0
    mask = (rad >= r_lo) & (rad <= r_hi)
    if not mask.any():
        raise ValueError(f"no calibration annulus: [{r_lo:.3g}, {r_hi:.3g}] empty on this grid")
    # the symbol route is mollified but the direct sum is sharp; correct the
    # direct side to second order in the smoothing variance, using
    # Lap(z_j |z|^-p) = p (p - dim) z_j |z|^-(p+2) (next order < 1e-4 here)
    p = grid.dim + 2 * spec.n0 + spec.eps0
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(rad > 0, 1.0 + 0.5 * eps * p * (p - grid.dim) / rad**2, 1.0)
    num = 0.0
    den = 0.0
    for u, d in zip(raw_comps, direct):
        dm = (d * corr)[mask]
        num += float((dm * u[mask]).sum())
        den += float((u[mask] * u[mask]).sum())
    if den == 0:
        raise ValueError("degenerate symbol realization; cannot calibrate")
    return num / den


_RIESZ_CACHE: dict = {}


def realize_kernel(spec: KernelSpec, grid: GridSpec) -> VectorField:
    """Mollified grid realization of the kernel as a vector field.

    Raises
    ------
    MollificationError
        For singular variants with ``mollification_eps == 0``.
    """
    v = spec.variant
    eps = spec.mollification_eps
    if getattr(v, "singular", False) and eps <= 0:
        raise MollificationError(
            f"{type(v).__name__} requires mollification_eps > 0")
    if isinstance(v, ConstantVector):
        comps = []
        for j in range(grid.dim):
            cj = v.c[j] if j < len(v.c) else v.c[0]
            comps.append(np.full(grid.shape, float(cj)))
        return VectorField(grid, comps)
    if isinstance(v, GridSampled):
        if v.field.grid != grid:
            raise ValueError("grid-sampled kernel lives on a different grid")
        comps = v.field.components
        if eps > 0:
            comps = [heat_apply(ScalarField(grid, c), eps).values for c in comps]
        return VectorField(grid, comps)
    if isinstance(v, DiracDerivative):
        if v.direction >= grid.dim:
            raise ValueError(f"direction {v.direction} invalid for dim {grid.dim}")
        spike = heat_apply(_unit_spike(grid), eps)
        order = [0] * grid.dim
        order[v.direction] = v.order
        core = field_derivative(spike, tuple(order)).values
        comps = [core if j == v.direction else np.zeros(grid.shape)
                 for j in range(grid.dim)]
        return VectorField(grid, comps)
    if isinstance(v, RieszOrder):
        key = (v, grid.dim, grid.points_per_dim, grid.extent, eps)
        if key not in _RIESZ_CACHE:
            if len(_RIESZ_CACHE) > 32:
                _RIESZ_CACHE.clear()
            raw = _riesz_symbol_route(v, grid, eps)
            scale = _riesz_calibration_scale(v, grid, eps, raw)
            comps = []
            for j in range(grid.dim):
                cj = v.c[j] if j < len(v.c) else v.c[0]
                comps.append(cj * scale * raw[j])
            _RIESZ_CACHE[key] = comps
        return VectorField(grid, [c.copy() for c in _RIESZ_CACHE[key]])
    raise TypeError(f"unknown kernel variant {type(v).__name__}")


def _unit_spike(grid: GridSpec) -> ScalarField:
    vals = np.zeros(grid.shape)
    idx = tuple(int(np.argmin(np.abs(grid.axis_coords()))) for _ in range(grid.dim))
    vals[idx] = 1.0 / grid.cell_volume
    return ScalarField(grid, vals)


# ---------------------------------------------------------------------------
# drifts


def drift_from_kernel(spec: KernelSpec, rho: ScalarField, t: float,
                      report_sensitivity: bool = False) -> VectorField:
    """Convolution drift ``K(t) t^kappa (kernel * rho)`` by spectral convolution.

    With ``report_sensitivity=True`` the result's ``meta['eps_sensitivity']``
    carries the sup-norm change when the mollification is halved.
    """
    rho.require_density()
    factor = spec.modulation.factor(t)
    kern = realize_kernel(spec, rho.grid)
    if kern.grid != rho.grid:
        raise ValueError("kernel and density grids differ")
    rho_hat = np.fft.fftn(rho.values)
    comps = []
    for c in kern.components:
        # ifftshift re-roots the kernel at zero displacement before the
        # circular convolution
        conv = np.fft.ifftn(np.fft.fftn(np.fft.ifftshift(c)) * rho_hat).real
        comps.append(factor * conv * rho.grid.cell_volume)
    out = VectorField(rho.grid, comps)
    if report_sensitivity and spec.mollification_eps > 0:
        half = KernelSpec(spec.variant, spec.mollification_eps / 2.0, spec.modulation)
        other = drift_from_kernel(half, rho, t)
        diff = max(np.abs(a - b).max()
                   for a, b in zip(out.components, other.components))
        out.meta["eps_sensitivity"] = diff
    return out


# ---------------------------------------------------------------------------
# density-derivative (Nemytskii) drifts


def _nemytskii_families():
    """Built-in pointwise maps F(x, H) -> drift vector, 1-Lipschitz in H.

    H is the tuple of flattened derivative stacks (rho, grad rho, ...); each
    family emits one component per spatial dimension.
    """

    def zero(x, H, dim, params):
        return [np.zeros_like(H[0])] * dim

    def density(x, H, dim, params):
        out = [np.zeros_like(H[0])] * dim
        out[0] = H[0].copy()
        return out

    def clipped_gradient(x, H, dim, params):
        cap = params.get("cap", 1.0)
        if len(H) < 2:
            raise ValueError("clipped_gradient needs derivative depth n >= 2")
        out = []
        for j in range(dim):
            out.append(np.clip(H[1 + j], -cap, cap))
        return out

    def linear(x, H, dim, params):
        weights = params.get("weights")
        if weights is None:
            raise ValueError("linear family needs 'weights'")
        w = np.asarray(weights, dtype=float)
        if w.size != len(H):
            raise ValueError(f"need {len(H)} weights, got {w.size}")
        norm = np.linalg.norm(w)
        if norm > 1:
            w = w / norm  # keep the unit Lipschitz bound
        combo = sum(wi * h for wi, h in zip(w, H))
        out = [np.zeros_like(H[0])] * dim
        out[0] = combo
        return out

    return {"zero": zero, "density": density,
            "clipped_gradient": clipped_gradient, "linear": linear}


_NEMYTSKII = _nemytskii_families()


@dataclass(frozen=True)
class NemytskiiSpec:
    """Pointwise drift from the density and its derivatives up to order n-1."""

    n: int = 1
    family: str = "density"
    params: tuple = ()
    modulation: TimeModulation = field(default_factory=TimeModulation)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"derivative depth n must be >= 1, got {self.n}")
        if self.n - 1 > 4:
            raise ValueError(f"unsupported derivative depth n={self.n} (n-1 > 4)")
        if self.family not in _NEMYTSKII:
            raise ValueError(f"unknown family {self.family!r}; "
                             f"choose from {sorted(_NEMYTSKII)}")

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


def _derivative_stack(rho: ScalarField, n: int):
    """Flattened (rho, all first derivatives, all second derivatives, ...)."""
    grid = rho.grid
    H = [rho.values]
    if n >= 2:
        for j in range(grid.dim):
            order = [0] * grid.dim
            order[j] = 1
            H.append(field_derivative(rho, tuple(order)).values)
    for depth in range(2, n):
        for combo in _tensor_orders(grid.dim, depth):
            H.append(field_derivative(rho, combo).values)
    return H


def _tensor_orders(dim: int, depth: int):
    if dim == 1:
        return [(depth,)]
    out = []
    for a in range(depth + 1):
        out.append((depth - a, a))
    return out


def nemytskii_drift(spec: NemytskiiSpec, rho: ScalarField, t: float) -> VectorField:
    """Drift ``K(t) t^kappa F(x, (rho, grad rho, ...))`` evaluated pointwise."""
    rho.require_density()
    H = _derivative_stack(rho, spec.n)
    fn = _NEMYTSKII[spec.family]
    comps = fn(rho.grid.coords(), H, rho.grid.dim, spec.param_dict)
    factor = spec.modulation.factor(t)
    return VectorField(rho.grid, [factor * c for c in comps])


def _stack_size(dim: int, n: int) -> int:
    total = 1
    for depth in range(1, n):
        total += 1 if dim == 1 else depth + 1
    return total


def nemytskii_lipschitz_check(spec: NemytskiiSpec, t: float, samples: int = 1000,
                              seed: int = 0, dim: int = 1) -> dict:
    """Sampled Lipschitz quotient of the drift map against its envelope.

    Draws random derivative-stack pairs and measures
    ``|b(h) - b(h~)| / ||h - h~||``; the max must stay below K(t) t^kappa.
    """
    rng = np.random.default_rng(seed)
    n_entries = _stack_size(dim, spec.n)
    fn = _NEMYTSKII[spec.family]
    factor = spec.modulation.factor(t)
    worst = 0.0
    for _ in range(samples):
        h = rng.normal(size=n_entries)
        ht = h + rng.normal(scale=0.5, size=n_entries)
        fa = np.array(fn(None, list(h[:, None]), dim, spec.param_dict))
        fb = np.array(fn(None, list(ht[:, None]), dim, spec.param_dict))
        gap = float(np.linalg.norm((fa - fb).ravel()))
        dh = float(np.linalg.norm(h - ht))
        if dh > 1e-12:
            worst = max(worst, gap / dh)
    return {"measured": factor * worst, "bound": factor, "ratio": worst}


# ---------------------------------------------------------------------------
# membership studies


@dataclass
class NormStudy:
    eps_values: list
    norms: list
    verdict: str            # "bounded" | "unbounded"
    growth_exponent: float  # q in norm ~ eps^-q (log-log fit, sign flipped)
    aic_bounded: float
    aic_power: float

    def rows(self):
        return [(e, n, self.verdict) for e, n in zip(self.eps_values, self.norms)]


def _fit_plateau(eps, norms):
    """Least squares for norm = a + b * eps**c in log space.

    b may take either sign: a norm can approach its finite limit from below
    (point-mass smoothing) or from above (tail-dominated kernels).
    """
    eps = np.asarray(eps)
    y = np.log(norms)

    def resid(p):
        a, b, c = p
        model = np.maximum(a + b * eps**c, 1e-300)
        return np.log(model) - y

    a0 = float(norms[-1])
    b0 = float(norms[0] - a0) / float(eps[0] ** 0.5)
    best = math.inf
    for c0 in (0.25, 0.5, 1.0):
        try:
            sol = least_squares(resid, x0=[max(a0, 1e-9), b0 if b0 != 0 else 1e-6, c0],
                                bounds=([0, -np.inf, 0.05], [np.inf, np.inf, 4.0]))
            best = min(best, float((sol.fun**2).sum()))
        except Exception:
            continue
    return best


def _fit_power(eps, norms):
    eps = np.asarray(eps)
    y = np.log(norms)
    slope, intercept = np.polyfit(np.log(eps), y, 1)
    rss = float(((slope * np.log(eps) + intercept - y) ** 2).sum())
    return slope, rss


def kernel_norm_study(spec: KernelSpec, idx: SobolevIndex, eps_list, grid: GridSpec,
                      lat: BallLattice | None = None) -> NormStudy:
    """Windowed-norm trace of the mollified kernel across mollification times.

    Verdict rule (documented): fit "plateau" ``a + b eps^c`` against "power"
    ``A eps^-q`` on the (eps, norm) data, both in log space, and compare
    AIC = 2k + n log(RSS/n).  The verdict is unbounded iff the power model
    wins and its fitted exponent q exceeds 0.05; tiny q means the power model
    degenerated into a constant, which is a bounded verdict.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    usable = [e for e in eps_list if math.sqrt(e) >= grid.spacing]
    if len(usable) < len(eps_list):
        warnings.warn(f"truncated {len(eps_list) - len(usable)} unresolvable "
                      f"mollification times (sqrt(eps) < spacing)", stacklevel=2)
    if len(usable) < 3:
        raise ValueError("need at least 3 resolvable mollification times")
    norms = []
    for e in usable:
        realized = realize_kernel(
            KernelSpec(spec.variant, e, spec.modulation), grid)
        norms.append(local_neg_norm(realized, idx, lat))
    n = len(usable)
    rss_plateau = _fit_plateau(usable, norms)
    slope, rss_power = _fit_power(usable, norms)
    aic_a = 2 * 3 + n * math.log(max(rss_plateau, 1e-300) / n)
    aic_b = 2 * 2 + n * math.log(max(rss_power, 1e-300) / n)
    q = -slope
    unbounded = (aic_b < aic_a) and (q > 0.05)
    return NormStudy(usable, norms, "unbounded" if unbounded else "bounded",
                     q, aic_a, aic_b)


# ---------------------------------------------------------------------------
# named catalog for configs and the CLI


def kernel_catalog() -> dict:
    return {
        "zero": lambda grid, **kw: KernelSpec(
            ConstantVector((0.0,) * grid.dim), 0.0, _mod(kw)),
        "constant": lambda grid, **kw: KernelSpec(
            ConstantVector(_as_vec(kw.get("c", 1.0), grid.dim)), 0.0, _mod(kw)),
        "riesz": lambda grid, **kw: KernelSpec(
            RieszOrder((float(kw.get("c", 1.0)),) * grid.dim,
                       int(kw.get("n0", 0)), float(kw.get("eps0", 0.5))),
            float(kw.get("eps", default_mollification(grid))), _mod(kw)),
        "dirac": lambda grid, **kw: KernelSpec(
            DiracDerivative(int(kw.get("order", 0)), int(kw.get("direction", 0))),
            float(kw.get("eps", default_mollification(grid))), _mod(kw)),
    }


def _as_vec(c, dim: int) -> tuple:
    if np.iterable(c):
        return tuple(float(x) for x in c)
    return (float(c),) * dim


def _mod(kw) -> TimeModulation:
    return TimeModulation(kappa=float(kw.get("kappa", 0.0)),
                          table=kw.get("K_table"))


def make_kernel(name: str, grid: GridSpec, **kw) -> KernelSpec:
    cat = kernel_catalog()
    if name not in cat:
        raise ValueError(f"unknown kernel {name!r}; catalog: {sorted(cat)}")
    return cat[name](grid, **kw)
