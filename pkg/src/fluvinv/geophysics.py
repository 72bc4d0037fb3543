"""Differentiable forward model from coarse-sediment fraction to a seismic cube.

Chain: unconsolidated quartz/clay mixture -> density and P-wave velocity
(Voigt-Reuss-Hill mineral mixing, Hertz-Mindlin at critical porosity,
modified Hashin-Shtrikman lower-bound interpolation, Gassmann water
saturation) -> normal-incidence reflectivity over a burden-padded column ->
3D convolution with a separable point-spread function (depth-domain Ricker
vertically, Gaussian laterally).

Formulas follow the friable-sand model of Avseth, Mukerji & Mavko (2005),
"Quantitative Seismic Interpretation", sec. 2.5-2.6, and Mavko, Mukerji &
Dvorkin, "The Rock Physics Handbook".
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensors as tc
from .grids import GridGeometry, ModelGrid

__all__ = [
    "GeophysicsError",
    "MineralPhase",
    "RockPhysicsParams",
    "BurdenConfig",
    "PsfConfig",
    "PsfKernel",
    "SeismicCube",
    "SeismicModel",
    "rock_physics_nodes",
    "rock_physics",
    "reflectivity_nodes",
    "reflectivity",
    "build_psf",
    "seismic_forward",
]


class GeophysicsError(Exception):
    pass


@dataclass(frozen=True)
class MineralPhase:
    """End-member solid phase: density (g/cm3), end-member porosity,
    bulk and shear moduli (GPa)."""

    rho: float
    porosity: float
    bulk: float
    shear: float


@dataclass(frozen=True)
class RockPhysicsParams:
    quartz: MineralPhase = MineralPhase(rho=2.65, porosity=0.27, bulk=37.0, shear=44.0)
    clay: MineralPhase = MineralPhase(rho=2.6, porosity=0.14, bulk=21.0, shear=7.0)
    water_rho: float = 1.0          # g/cm3
    water_bulk: float = 2.29        # GPa
    critical_porosity: float = 0.5
    pressure: float = 0.01          # effective pressure, GPa (10 MPa)
    coordination: float = 8.5       # Hertz-Mindlin grain contacts

    def __post_init__(self):
        for phase in (self.quartz, self.clay):
            if phase.bulk <= 0 or phase.shear <= 0:
                raise GeophysicsError("mineral moduli must be > 0")
            if not 0 < phase.porosity < self.critical_porosity:
                raise GeophysicsError(
                    "end-member porosities must lie in (0, critical porosity)")
        if not 0 < self.critical_porosity < 1:
            raise GeophysicsError("critical porosity must lie in (0, 1)")


def _hertz_mindlin(k_min, g_min, params):
    """Dry-frame moduli of the random grain pack at critical porosity."""
    phi_c = params.critical_porosity
    n = params.coordination
    p = params.pressure
    nu = (3.0 * k_min - 2.0 * g_min) / (2.0 * (3.0 * k_min + g_min))
    k_hm = (n ** 2 * (1.0 - phi_c) ** 2 * g_min ** 2 * p
            / (18.0 * np.pi ** 2 * (1.0 - nu) ** 2)) ** (1.0 / 3.0)
    g_hm = ((5.0 - 4.0 * nu) / (5.0 * (2.0 - nu))) * (
        3.0 * n ** 2 * (1.0 - phi_c) ** 2 * g_min ** 2 * p
        / (2.0 * np.pi ** 2 * (1.0 - nu) ** 2)) ** (1.0 / 3.0)
    return k_hm, g_hm


def rock_physics_nodes(tape, f, params=RockPhysicsParams()):
    """Density (g/cm3) and P-wave velocity (m/s) nodes from a coarse-fraction node.

    Elementwise and smooth; the quartz/clay split, mineral mixing, porosity,
    dry frame, saturation and velocity all ride on the tape.
    """
    fv = np.asarray(f.value, dtype=np.float64)
    if fv.min() < -1e-9 or fv.max() > 1.0 + 1e-9:
        raise GeophysicsError(
            f"coarse fraction outside [0, 1]: range [{fv.min()}, {fv.max()}]")
    f = tc.clamp(f, 0.0, 1.0)
    q, c = params.quartz, params.clay
    phi_c = params.critical_porosity

    one_minus = 1.0 - f
    # Voigt-Reuss-Hill mineral mixing over the solid fractions (f, 1-f)
    k_voigt = f * q.bulk + one_minus * c.bulk
    k_reuss = 1.0 / (f / q.bulk + one_minus / c.bulk)
    k_min = 0.5 * (k_voigt + k_reuss)
    g_voigt = f * q.shear + one_minus * c.shear
    g_reuss = 1.0 / (f / q.shear + one_minus / c.shear)
    g_min = 0.5 * (g_voigt + g_reuss)

    # porosity mixes linearly between the end members, kept off the Gassmann poles
    phi = tc.clamp(f * q.porosity + one_minus * c.porosity, 1e-6, phi_c - 1e-6)

    # Hertz-Mindlin pack at (critical porosity, effective pressure)
    nu = (3.0 * k_min - 2.0 * g_min) / (2.0 * (3.0 * k_min + g_min))
    hm_scale = params.coordination ** 2 * (1.0 - phi_c) ** 2 * params.pressure
    k_hm = tc.power(hm_scale * tc.square(g_min)
                    / (18.0 * np.pi ** 2 * tc.square(1.0 - nu)), 1.0 / 3.0)
    g_hm = ((5.0 - 4.0 * nu) / (5.0 * (2.0 - nu))) * tc.power(
        3.0 * hm_scale * tc.square(g_min) / (2.0 * np.pi ** 2 * tc.square(1.0 - nu)),
        1.0 / 3.0)

    # modified Hashin-Shtrikman lower bound between the mineral (phi=0) and
    # the Hertz-Mindlin pack (phi=phi_c)
    frac = phi / phi_c
    k_dry = 1.0 / (frac / (k_hm + (4.0 / 3.0) * g_hm)
                   + (1.0 - frac) / (k_min + (4.0 / 3.0) * g_hm)) - (4.0 / 3.0) * g_hm
    zeta = (g_hm / 6.0) * (9.0 * k_hm + 8.0 * g_hm) / (k_hm + 2.0 * g_hm)
    g_dry = 1.0 / (frac / (g_hm + zeta) + (1.0 - frac) / (g_min + zeta)) - zeta

    # Gassmann water saturation; shear modulus unchanged
    k_sat = k_dry + tc.square(1.0 - k_dry / k_min) / (
        phi / params.water_bulk + (1.0 - phi) / k_min - k_dry / tc.square(k_min))
    g_sat = g_dry

    # phase volumes per unit bulk: f of saturated sand, 1-f of saturated clay,
    # so density is exactly affine between the two wet end members
    rho = (f * (1.0 - q.porosity) * q.rho
           + one_minus * (1.0 - c.porosity) * c.rho
           + phi * params.water_rho)
    # GPa and g/cm3 to m/s: sqrt(1e9 Pa / 1e3 kg/m3) = 1000
    vp = 1000.0 * tc.sqrt((k_sat + (4.0 / 3.0) * g_sat) / rho)
    return rho, vp


def rock_physics(f, params=RockPhysicsParams(), dtype=np.float64):
    """Numpy wrapper around :func:`rock_physics_nodes`."""
    tape = tc.GraphTape(dtype)
    rho, vp = rock_physics_nodes(tape, tape.constant(np.asarray(f)), params)
    return np.asarray(rho.value), np.asarray(vp.value)


def rock_physics_moduli(f, params=RockPhysicsParams()):
    """Dry and saturated moduli for a fraction array (diagnostics/tests)."""
    tape = tc.GraphTape(np.float64)
    fn = tc.clamp(tape.constant(np.asarray(f, dtype=np.float64)), 0.0, 1.0)
    q, c = params.quartz, params.clay
    fv = fn.value
    k_min = 0.5 * ((fv * q.bulk + (1 - fv) * c.bulk)
                   + 1.0 / (fv / q.bulk + (1 - fv) / c.bulk))
    g_min = 0.5 * ((fv * q.shear + (1 - fv) * c.shear)
                   + 1.0 / (fv / q.shear + (1 - fv) / c.shear))
    phi = np.clip(fv * q.porosity + (1 - fv) * c.porosity, 1e-6,
                  params.critical_porosity - 1e-6)
    k_hm, g_hm = _hertz_mindlin(k_min, g_min, params)
    frac = phi / params.critical_porosity
    k_dry = 1.0 / (frac / (k_hm + 4 * g_hm / 3)
                   + (1 - frac) / (k_min + 4 * g_hm / 3)) - 4 * g_hm / 3
    zeta = (g_hm / 6.0) * (9 * k_hm + 8 * g_hm) / (k_hm + 2 * g_hm)
    g_dry = 1.0 / (frac / (g_hm + zeta) + (1 - frac) / (g_min + zeta)) - zeta
    k_sat = k_dry + (1 - k_dry / k_min) ** 2 / (
        phi / params.water_bulk + (1 - phi) / k_min - k_dry / k_min ** 2)
    return {"k_dry": k_dry, "g_dry": g_dry, "k_sat": k_sat, "g_sat": g_dry,
            "k_mineral": k_min, "g_mineral": g_min, "porosity": phi}


# ---------------------------------------------------------------------------
# reflectivity with over-/underburden

@dataclass(frozen=True)
class BurdenConfig:
    """Structureless material added above and below the deposit interval.

    Total extra thickness split evenly; constant pure fine fraction so the
    burden itself is reflection-free but the top/base contrasts remain.
    ``bottom_fraction`` overrides the underburden lithology (single-interface
    test setups); None mirrors the overburden.
    """

    total_thickness_m: float = 18.0
    fraction: float = 0.0
    bottom_fraction: float | None = None

    @property
    def fractions(self):
        bottom = self.fraction if self.bottom_fraction is None else self.bottom_fraction
        return self.fraction, bottom

    def cells_per_side(self, dz):
        half = self.total_thickness_m / 2.0
        cells = half / dz
        if abs(cells - round(cells)) > 1e-9:
            raise GeophysicsError(
                f"burden half thickness {half} m is not a whole number of {dz} m cells")
        return int(round(cells))


def reflectivity_nodes(tape, rho, vp, geometry, burden=BurdenConfig(),
                       params=RockPhysicsParams()):
    """Normal-incidence reflection coefficients over the burden-padded column.

    Output shape (nz + 2*pad - 1, ny, nx): one sample per interface.
    """
    pad = burden.cells_per_side(geometry.dz)
    f_top, f_bot = burden.fractions
    imp_caps = []
    for f_side in (f_top, f_bot):
        rho_b, vp_b = rock_physics(np.float64(f_side), params)
        imp_caps.append(float(rho_b * vp_b))

    imp = rho * vp
    nzp = geometry.nz + 2 * pad
    top = np.full((pad, geometry.ny, geometry.nx), imp_caps[0])
    bot = np.full((pad, geometry.ny, geometry.nx), imp_caps[1])
    imp_padded = tc.concat([tape.constant(top), imp, tape.constant(bot)], axis=0)

    upper = tc.crop(imp_padded, (slice(0, nzp - 1), slice(None), slice(None)))
    lower = tc.crop(imp_padded, (slice(1, nzp), slice(None), slice(None)))
    return (lower - upper) / (lower + upper)


def reflectivity(grid, burden=BurdenConfig(), params=RockPhysicsParams(),
                 dtype=np.float64):
    """Numpy reflectivity cube for a model grid."""
    tape = tc.GraphTape(dtype)
    f = tape.constant(grid.coarse_fraction)
    rho, vp = rock_physics_nodes(tape, f, params)
    r = reflectivity_nodes(tape, rho, vp, grid.geometry, burden, params)
    return np.asarray(r.value)


# ---------------------------------------------------------------------------
# point-spread function

@dataclass(frozen=True)
class PsfConfig:
    """Separable PSF: depth-domain Ricker vertically, isotropic Gaussian
    laterally with width set by the illumination aperture."""

    peak_frequency_hz: float = 60.0
    incident_angle_deg: float = 0.0
    illumination_angle_deg: float = 45.0
    velocity_mps: float | None = None    # None: mean Vp of the padded cube
    kernel_extents: tuple | None = None  # (kz, ky, kx), odd; None: auto

    def __post_init__(self):
        if self.peak_frequency_hz <= 0:
            raise GeophysicsError("peak frequency must be > 0")
        if not 0 < self.illumination_angle_deg <= 90:
            raise GeophysicsError("illumination angle must lie in (0, 90] degrees")
        if self.kernel_extents is not None:
            if any(int(k) % 2 == 0 for k in self.kernel_extents):
                raise GeophysicsError(
                    f"kernel extents must be odd, got {self.kernel_extents}")


@dataclass
class PsfKernel:
    """1D separable factors; the full kernel is their outer product."""

    vertical: np.ndarray
    lateral_y: np.ndarray
    lateral_x: np.ndarray
    velocity_mps: float
    sigma_lateral_m: float

    def full(self):
        return (self.vertical[:, None, None]
                * self.lateral_y[None, :, None]
                * self.lateral_x[None, None, :])


def ricker_depth(zeta, peak_wavenumber):
    """Zero-phase Ricker in depth: (1 - 2 pi^2 k^2 z^2) exp(-pi^2 k^2 z^2)."""
    u = (np.pi * peak_wavenumber * np.asarray(zeta, dtype=np.float64)) ** 2
    return (1.0 - 2.0 * u) * np.exp(-u)


def build_psf(config, dz, dy, dx, velocity_mps=None):
    """Sampled PSF factors for the given cell sizes.

    The vertical factor keeps w(0) = 1; both lateral factors are normalized
    to unit sum so a laterally uniform reflector passes unchanged.
    """
    v = config.velocity_mps if config.velocity_mps is not None else velocity_mps
    if v is None or v <= 0:
        raise GeophysicsError("PSF needs a positive average velocity")
    k_peak = 2.0 * config.peak_frequency_hz / v  # two-way vertical wavenumber
    theta = np.deg2rad(config.illumination_angle_deg)
    sigma = v / (4.0 * config.peak_frequency_hz * np.sin(theta))

    if config.kernel_extents is not None:
        kz, ky, kx = (int(k) for k in config.kernel_extents)
        hz, hy, hx = kz // 2, ky // 2, kx // 2
    else:
        # beyond 1.4/k the Ricker is below 1e-6; the lateral Gaussian collapses
        # to a delta once its first discretized side tap is negligible
        hz = int(np.ceil(1.4 / (k_peak * dz)))

        def lateral_half(d):
            if np.exp(-0.5 * (d / sigma) ** 2) < 1e-4:
                return 0
            return int(np.ceil(3.0 * sigma / d))

        hy, hx = lateral_half(dy), lateral_half(dx)

    if sigma < min(dx, dy) / 4.0:
        warnings.warn(f"lateral PSF width {sigma:.2f} m is below a quarter cell; "
                      "the blur is unresolvable on this grid", stacklevel=2)

    vertical = ricker_depth(np.arange(-hz, hz + 1) * dz, k_peak)

    def gauss(h, d):
        taps = np.exp(-0.5 * (np.arange(-h, h + 1) * d / sigma) ** 2)
        return taps / taps.sum()

    return PsfKernel(vertical=vertical, lateral_y=gauss(hy, dy), lateral_x=gauss(hx, dx),
                     velocity_mps=float(v), sigma_lateral_m=float(sigma))


# ---------------------------------------------------------------------------
# seismic forward

@dataclass
class SeismicCube:
    """Migrated-image amplitudes, one sample per interface of the padded column."""

    amplitudes: np.ndarray  # (nz_seis, ny, nx)
    geometry: GridGeometry
    velocity_mps: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.amplitudes)):
            raise GeophysicsError("seismic amplitudes must be finite")


def _conv_axis(tape, x, taps, axis):
    # separable "same" zero-padded convolution along one spatial axis of (1,Z,Y,X)
    if taps.shape[0] == 1:
        return x * float(taps[0])
    shape = [1, 1, 1, 1, 1]
    shape[2 + axis] = taps.shape[0]
    kern = tape.constant(taps.reshape(shape))
    return tc.conv3d(x, kern)


@dataclass
class SeismicModel:
    """Bundle of physics + imaging settings with forward operators."""

    params: RockPhysicsParams = field(default_factory=RockPhysicsParams)
    psf: PsfConfig = field(default_factory=PsfConfig)
    burden: BurdenConfig = field(default_factory=BurdenConfig)

    def average_velocity(self, coarse_values, geometry):
        """Mean Vp of the burden-padded cube; frozen w.r.t. differentiation."""
        if self.psf.velocity_mps is not None:
            return float(self.psf.velocity_mps)
        _, vp = rock_physics(np.asarray(coarse_values, dtype=np.float64), self.params)
        pad = self.burden.cells_per_side(geometry.dz)
        n_side = pad * geometry.ny * geometry.nx
        total = vp.sum(dtype=np.float64)
        for f_side in self.burden.fractions:
            _, vp_b = rock_physics(np.float64(f_side), self.params)
            total += n_side * float(vp_b)
        return float(total / (vp.size + 2 * n_side))

    def build(self, tape, coarse, geometry):
        """Seismic amplitude node (nz_seis, ny, nx) from a coarse-fraction node."""
        rho, vp = rock_physics_nodes(tape, coarse, self.params)
        refl = reflectivity_nodes(tape, rho, vp, geometry, self.burden, self.params)
        v_avg = self.average_velocity(coarse.value, geometry)
        kernel = build_psf(self.psf, geometry.dz, geometry.dy, geometry.dx, v_avg)

        nzs = refl.value.shape[0]
        x = tc.reshape(refl, (1, nzs, geometry.ny, geometry.nx))
        x = _conv_axis(tape, x, kernel.vertical, axis=0)
        x = _conv_axis(tape, x, kernel.lateral_y, axis=1)
        x = _conv_axis(tape, x, kernel.lateral_x, axis=2)
        return tc.reshape(x, (nzs, geometry.ny, geometry.nx))

    def forward(self, grid, dtype=np.float64):
        """SeismicCube for a model grid."""
        tape = tc.GraphTape(dtype)
        coarse = tape.constant(grid.coarse_fraction)
        out = self.build(tape, coarse, grid.geometry)
        v_avg = self.average_velocity(grid.coarse_fraction, grid.geometry)
        return SeismicCube(np.asarray(out.value), grid.geometry, velocity_mps=v_avg)


def seismic_forward(grid, params=None, psf=None, burden=None, dtype=np.float64):
    """One-call forward: ModelGrid -> SeismicCube."""
    model = SeismicModel(params=params or RockPhysicsParams(),
                         psf=psf or PsfConfig(),
                         burden=burden or BurdenConfig())
    return model.forward(grid, dtype=dtype)
