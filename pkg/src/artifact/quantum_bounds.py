"""Quantum limits on detecting and localizing a faint companion.

Closed forms for the optimal discrimination exponent (star-only versus
star-plus-planet) and for the 2x2 Fisher information matrix of the polar
separation parameters, both specialized to a clear circular aperture.
Helpers convert either bound into photon counts and integration times and
emit requirement maps over separation and contrast grids.

All separations are in diffraction-normalized focal units; quote them in
Airy-sigma units only through `optics.separation_from_sigma_units`.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .optics import Scene, separation_from_sigma_units
from .specfun import bessel_j

__all__ = [
    "HIGH_CONTRAST_B_MAX",
    "AsymptoticExponent",
    "DetectionBudget",
    "FisherMatrix",
    "detection_budget",
    "localization_budget",
    "localization_photons",
    "photon_requirement_map",
    "qce",
    "qce_high_contrast",
    "qfim_high_contrast",
    "qfim_polar",
    "sigma_loc",
    "write_photon_map_csv",
]

# validity guard for the small-b asymptotic forms
HIGH_CONTRAST_B_MAX = 1e-2

_R_EPS = 1e-8


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric 2x2 information matrix over (separation, position angle).

    kind is "quantum_bound" for the measurement-independent bound or
    "classical" for a specific measurement, in which case system_name
    identifies it.  The scene the matrix was evaluated at is kept so
    downstream error combiners know the separation.
    """

    entries: np.ndarray
    kind: str
    scene: Scene
    system_name: str = ""

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (2, 2):
            raise ValueError("Fisher matrix must be 2x2")
        entries = 0.5 * (entries + entries.T)
        object.__setattr__(self, "entries", entries)
        if self.kind not in ("quantum_bound", "classical"):
            raise ValueError("kind must be 'quantum_bound' or 'classical'")
        if self.kind == "classical" and not self.system_name:
            raise ValueError("classical Fisher matrix needs a system_name")
        scale = max(1.0, float(np.abs(entries).max()))
        if float(np.linalg.eigvalsh(entries)[0]) < -1e-12 * scale:
            raise ValueError("Fisher matrix is not positive semidefinite")

    def dominates(self, other, rtol=1e-9):
        """True when self - other is PSD within rtol of self's trace."""
        gap = self.entries - other.entries
        floor = -rtol * max(1.0, float(np.trace(self.entries)))
        return float(np.linalg.eigvalsh(gap)[0]) >= floor


@dataclass(frozen=True)
class DetectionBudget:
    """Photon count and exposure implied by an error-probability target."""

    target_error: float
    photons_required: float
    exposure_seconds: float

    def __post_init__(self):
        if not 0.0 < self.target_error < 1.0:
            raise ValueError("target_error must lie in (0, 1)")


@dataclass(frozen=True)
class AsymptoticExponent:
    """Small-b exponent value plus a regime flag.

    in_regime is False when the brightness ratio sits outside the
    asymptotic validity guard; the value is still returned.
    """

    value: float
    in_regime: bool

    def __float__(self):
        return self.value


def _gamma0(r):
    """Overlap of the aperture PSF with a copy displaced radially by r."""
    if r < _R_EPS:
        return 1.0
    return float(bessel_j(1, 2.0 * math.pi * r) / (math.pi * r))


def _overlap_slope_factor(r):
    """2 J_2(2 pi r)/(pi r); the radial slope of the PSF overlap over -pi."""
    if r < _R_EPS:
        return 0.0
    return float(2.0 * bessel_j(2, 2.0 * math.pi * r) / (math.pi * r))


def qce(scene):
    """Optimal exponent for discriminating the scene from its bare star.

    Returns -log of the fundamental-mode survival probability of the
    two-source mixture; nonnegative, and exactly zero at zero separation
    where the two hypotheses coincide.
    """
    if scene.r_delta == 0.0:
        return 0.0
    b = scene.b
    g_star = _gamma0(b * scene.r_delta)
    g_planet = _gamma0((1.0 - b) * scene.r_delta)
    return max(0.0, -math.log((1.0 - b) * g_star**2 + b * g_planet**2))


def qce_high_contrast(r_delta, b):
    """Leading small-b exponent b*(1 - Gamma_0(r_delta)^2).

    Returns an AsymptoticExponent whose in_regime flag is False when b
    exceeds HIGH_CONTRAST_B_MAX; the value is computed either way.
    """
    if r_delta < 0:
        raise ValueError("separation must be nonnegative")
    if not 0.0 < b < 1.0:
        raise ValueError("relative brightness b must lie in (0, 1)")
    g = _gamma0(r_delta)
    return AsymptoticExponent(b * (1.0 - g * g), b <= HIGH_CONTRAST_B_MAX)


def qfim_polar(scene):
    """Exact quantum Fisher matrix of (r_delta, phi_delta), clear aperture.

    Diagonal by rotational symmetry: the radial entry is
    4 b (1-b) pi^2 [1 - kappa^2 (2 J_2(2 pi r)/(pi r))^2] with
    kappa = 1 - 2b, and the angular entry is 4 b (1-b) pi^2 r^2.
    """
    if scene.r_delta <= 0:
        raise ValueError("polar chart is singular at zero separation")
    b = scene.b
    kappa = 1.0 - 2.0 * b
    weight = 4.0 * b * (1.0 - b) * math.pi**2
    g = _overlap_slope_factor(scene.r_delta)
    k11 = weight * (1.0 - (kappa * g) ** 2)
    k22 = weight * scene.r_delta**2
    return FisherMatrix(np.diag([k11, k22]), "quantum_bound", scene)


def qfim_high_contrast(r_delta, b):
    """Small-b limit of qfim_polar: diag 4 pi^2 b [1 - g^2, r_delta^2].

    g = 2 J_2(2 pi r)/(pi r) vanishes both on axis and at every zero of
    J_2, so the radial entry saturates at 4 pi^2 b there.
    """
    if r_delta < 0:
        raise ValueError("separation must be nonnegative")
    g = _overlap_slope_factor(r_delta)
    k11 = 4.0 * math.pi**2 * b * (1.0 - g * g)
    k22 = 4.0 * math.pi**2 * b * r_delta**2
    return FisherMatrix(np.diag([k11, k22]), "quantum_bound", Scene(r_delta, 0.0, b))


def sigma_loc(fisher, n_photons):
    """Combined localization error sqrt(sigma_r^2 + (r sigma_phi)^2).

    Uses the diagonal Cramer-Rao variances of the supplied Fisher matrix
    at its stored scene separation, for n_photons detected photons.
    """
    if n_photons <= 0:
        raise ValueError("photon count must be positive")
    k11 = float(fisher.entries[0, 0])
    k22 = float(fisher.entries[1, 1])
    if k11 <= 0.0 or k22 <= 0.0:
        raise ValueError("Fisher matrix is singular for this error combination")
    r = fisher.scene.r_delta
    return math.sqrt((1.0 / k11 + r * r / k22) / n_photons)


def detection_budget(scene, target_error, prescription):
    """Photons and seconds needed to reach a detection error probability.

    photons = -ln(target_error)/qce(scene); an exponent of zero (for
    example at zero separation) is signaled by infinite budget entries.
    """
    if not 0.0 < target_error < 1.0:
        raise ValueError("target_error must lie in (0, 1)")
    xi = qce(scene)
    if xi == 0.0:
        return DetectionBudget(target_error, math.inf, math.inf)
    photons = -math.log(target_error) / xi
    return DetectionBudget(target_error, photons, photons / prescription.photon_flux_hz)


def localization_photons(scene, rel_error):
    """Photons for a relative localization error sigma_loc/r_delta target."""
    if rel_error <= 0:
        raise ValueError("rel_error must be positive")
    fisher = qfim_polar(scene)
    k11 = float(fisher.entries[0, 0])
    k22 = float(fisher.entries[1, 1])
    r = scene.r_delta
    return (1.0 / k11 + r * r / k22) / (rel_error * r) ** 2


def localization_budget(scene, rel_error, prescription):
    """(photons, seconds) for a relative localization error target."""
    photons = localization_photons(scene, rel_error)
    return photons, photons / prescription.photon_flux_hz


def photon_requirement_map(r_over_sigma_values, b_values, task="detection",
                           target=1e-3, prescription=None):
    """Requirement map rows over a (separation, contrast) grid.

    Rows are (r_delta_over_sigma, b, photons, seconds) in row-major order
    over the two input axes.  For task "detection" the target is an error
    probability; for task "localization" it is a relative localization
    error.  seconds is NaN when no prescription is given.
    """
    if task not in ("detection", "localization"):
        raise ValueError("task must be 'detection' or 'localization'")
    flux = prescription.photon_flux_hz if prescription is not None else None
    rows = np.empty((len(r_over_sigma_values) * len(b_values), 4))
    k = 0
    for r_sigma in r_over_sigma_values:
        r_delta = separation_from_sigma_units(r_sigma)
        for b in b_values:
            scene = Scene(r_delta, 0.0, b)
            if task == "detection":
                xi = qce(scene)
                photons = math.inf if xi == 0.0 else -math.log(target) / xi
            else:
                photons = localization_photons(scene, target)
            seconds = photons / flux if flux is not None else math.nan
            rows[k] = (r_sigma, b, photons, seconds)
            k += 1
    return rows


def write_photon_map_csv(path, rows, comment=None):
    """Write requirement-map rows as CSV with the standard four columns."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["r_delta_over_sigma", "b", "photons", "seconds"])
        for row in np.asarray(rows):
            writer.writerow([f"{v:.17g}" for v in row])
