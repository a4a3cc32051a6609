"""Information delivered by concrete measurements of a faint-companion scene.

Per-photon discrimination exponents and localization Fisher matrices for
the simulated measurement chains: photon counting in the analytic mode
basis, and the three nulling chains followed by either detect-or-absorb
counting or ideal imaging on the sampling grid.  Everything here is built
to compare directly against the measurement-independent limits in
quantum_bounds, so scalar exponents share that module's overlap
evaluation and matrix results use its FisherMatrix container.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .coronagraph import PropagatorPlan, output_state_image
from .modebasis import (
    FourierZernikeBasis,
    all_mode_probabilities,
    all_probability_gradients,
    source_coefficient_gradients,
    source_coefficients,
)
from .optics import AIRY_SIGMA, GridSpec, Scene
from .quantum_bounds import FisherMatrix, _gamma0

__all__ = [
    "PSF_THROUGHPUT_CEILING",
    "InformationCurve",
    "angular_resolution_order",
    "brightness_leakage_ratio",
    "cce_coronagraph",
    "cce_spade_binary",
    "cfim_direct_imaging",
    "cfim_spade",
    "modal_information_bound",
    "per_mode_information",
    "psf_throughput",
    "radial_group_information",
    "write_information_csv",
    "write_mode_information_csv",
]

# largest on-axis leak for which detect-or-absorb counting is meaningful
PSF_THROUGHPUT_CEILING = 1e-3

_QUARTER = 0.5 * math.pi
_SYSTEMS = ("spade", "perfect", "piaacmc", "vortex", "quantum_bound")


def _fundamental_miss(r):
    """1 - Gamma_0(r)^2, series-stabilized against cancellation at small r."""
    u = 2.0 * math.pi * r
    if u < 0.1:
        u2 = u * u
        return u2 * (0.25 - u2 * (5.0 / 192.0 - u2 * (7.0 / 4608.0)))
    g = _gamma0(r)
    return 1.0 - g * g


def _quarter_distance(phi):
    """Distance from phi to the nearest multiple of a quarter turn."""
    rem = math.fmod(phi, _QUARTER)
    if rem < 0.0:
        rem += _QUARTER
    return min(rem, _QUARTER - rem)


def _min_log_overlap(logp0, logp1, tol=1e-10):
    """Minimum over t in [0, 1] of log sum_a p0_a^t p1_a^(1-t).

    Takes log-probabilities restricted to the common support.  The
    objective is convex in t, so a golden-section bracket plus the two
    endpoints resolves the minimum to the stated tolerance in t.
    """

    def obj(t):
        return float(logsumexp(t * logp0 + (1.0 - t) * logp1))

    invphi = 0.5 * (math.sqrt(5.0) - 1.0)
    a, b = 0.0, 1.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = obj(d)
    return min(obj(0.0), obj(1.0), fc, fd)


def cce_spade_binary(scene):
    """Discrimination exponent of the two-outcome fundamental-mode sorter.

    The sorter separates "photon in the fundamental mode" from
    "anywhere else".  Without a companion every photon takes the first
    outcome, so the error exponent reduces to -log of the fundamental
    survival probability of the two-source mixture; the golden-section
    search over the interpolation exponent lands on that boundary.  The
    result matches quantum_bounds.qce to rounding, because this binary
    sorter is an optimal detection measurement.
    """
    if scene.r_delta == 0.0:
        return 0.0
    b = scene.b
    r_s, _ = scene.star_polar
    r_e, _ = scene.planet_polar
    survival = (1.0 - b) * _gamma0(r_s) ** 2 + b * _gamma0(r_e) ** 2
    if survival >= 1.0:
        return 0.0
    if survival == 0.0:
        return math.inf
    logp0 = np.array([0.0])
    logp1 = np.array([math.log(survival)])
    return -_min_log_overlap(logp0, logp1)


def psf_throughput(op):
    """Detected-energy fraction of an exactly on-axis source."""
    d = np.conj(op.mode_coefficients[0, :])
    return float(np.sum(np.abs(op.transmissions * d) ** 2))


def _modal_energy(op, r, phi):
    """Detected energy of a unit point source at polar (r, phi)."""
    c = source_coefficients(op.fields.basis, r, phi).astype(complex)
    d = op.mode_coefficients.conj().T @ c
    return float(np.sum(np.abs(op.transmissions * d) ** 2))


def cce_coronagraph(op, scene):
    """Detect-or-absorb exponent for a nulling chain with ideal counting.

    A chain that removes the fundamental detects nothing from a bare
    star, so the only discrimination error is planet photons being
    absorbed too; the exponent is -log(1 - T) with T the detected-energy
    fraction of the two-source mixture through the extracted modes.

    Raises when the chain transmits more than PSF_THROUGHPUT_CEILING of
    an on-axis source, where that reduction stops being meaningful.
    """
    leak = psf_throughput(op)
    if leak > PSF_THROUGHPUT_CEILING:
        raise ValueError(
            f"on-axis throughput {leak:.3e} exceeds {PSF_THROUGHPUT_CEILING:.0e}; "
            "detect-or-absorb counting needs a nulling chain"
        )
    if scene.r_delta == 0.0:
        return 0.0
    r_s, phi_s = scene.star_polar
    r_e, phi_e = scene.planet_polar
    total = (1.0 - scene.b) * _modal_energy(op, r_s, phi_s)
    total += scene.b * _modal_energy(op, r_e, phi_e)
    if total >= 1.0:
        return math.inf
    return -math.log1p(-total)


def per_mode_information(basis, scene):
    """Per-outcome information matrices of mode counting, (count, 2, 2).

    Each outcome contributes the outer product of its probability
    gradient over (separation, position angle) divided by its
    probability; zero-probability outcomes contribute zero by the usual
    limit.
    """
    p = all_mode_probabilities(basis, scene)
    g = all_probability_gradients(basis, scene)
    out = np.zeros((basis.count, 2, 2))
    live = p > 0.0
    quot = g[live] / p[live, None]
    out[live] = quot[:, :, None] * g[live][:, None, :]
    return out


def cfim_spade(basis, scene):
    """Localization information of ideal mode-sorted photon counting.

    Sums the analytic per-outcome contributions over the truncated
    basis.  Position angles within 1e-6 of a quarter turn carry no
    angular signal in an axis-aligned basis, so an unrotated basis is
    silently swapped for one rotated by an eighth turn there; pass a
    basis built with nonzero rotation to take responsibility instead.
    """
    if basis.rotation == 0.0 and _quarter_distance(scene.phi_delta) < 1e-6:
        basis = FourierZernikeBasis(basis.n_max, rotation=0.25 * math.pi)
    contrib = per_mode_information(basis, scene)
    return FisherMatrix(
        contrib.sum(axis=0), "classical", scene, system_name="spade"
    )


def radial_group_information(basis, scene):
    """Separation information per radial order, shape (n_max + 1,)."""
    contrib = per_mode_information(basis, scene)[:, 0, 0]
    out = np.zeros(basis.n_max + 1)
    np.add.at(out, basis._n_arr, contrib)
    return out


def cfim_direct_imaging(target, scene, step=None):
    """Localization information of ideal photon counting on the image grid.

    Intensity derivatives over (separation, position angle) come from
    central differences of full-scene images with step
    1e-4 * max(sigma, separation) unless overridden.  The quotient sum
    runs over pixels above 1e-18 of the image peak, which perturbs the
    integrals far less than the difference error.  ``target`` is a
    propagation plan or an extracted operator; plans are the spatially
    faithful choice for the chains whose compressed matrices are
    non-normal.
    """
    r, phi, b = scene.r_delta, scene.phi_delta, scene.b
    h = 1e-4 * max(AIRY_SIGMA, r) if step is None else float(step)
    if r <= h:
        raise ValueError("separation must exceed the difference step")
    grid = target.grid if isinstance(target, PropagatorPlan) else target.fields.grid
    base = output_state_image(target, scene)
    diff_r = output_state_image(target, Scene(r + h, phi, b))
    diff_r = diff_r - output_state_image(target, Scene(r - h, phi, b))
    diff_phi = output_state_image(target, Scene(r, phi + h, b))
    diff_phi = diff_phi - output_state_image(target, Scene(r, phi - h, b))
    live = base > 1e-18 * float(base.max())
    p = base[live]
    g_r = diff_r[live] / (2.0 * h)
    g_phi = diff_phi[live] / (2.0 * h)
    cross = float(np.sum(g_r * g_phi / p))
    entries = np.array(
        [
            [float(np.sum(g_r * g_r / p)), cross],
            [cross, float(np.sum(g_phi * g_phi / p))],
        ]
    ) * grid.dx**2
    return FisherMatrix(entries, "classical", scene, system_name=target.name)


def modal_information_bound(op, scene):
    """Transmission-weighted mode-counting information surface, 2x2 array.

    Evaluates the small-b counting information of the chain's own output
    modes at the scene separation, each term scaled by its energy
    transmission.  Offered as a diagnostic ceiling to compare against
    cfim_direct_imaging; it is a heuristic, not an asserted bound, so it
    returns a plain array rather than a FisherMatrix.
    """
    basis = op.fields.basis
    c = source_coefficients(basis, scene.r_delta, scene.phi_delta)
    grad = source_coefficient_gradients(basis, scene.r_delta, scene.phi_delta)
    v_conj = op.mode_coefficients.conj().T
    d = v_conj @ c.astype(complex)
    dg = v_conj @ grad.astype(complex)
    p = np.abs(d) ** 2
    dp = 2.0 * np.real(np.conj(d)[:, None] * dg)
    weight = np.abs(op.transmissions) ** 2
    live = p > 0.0
    quot = dp[live] / p[live, None]
    mats = quot[:, :, None] * dp[live][:, None, :]
    return scene.b * np.sum(weight[live, None, None] * mats, axis=0)


def brightness_leakage_ratio(r_delta, b):
    """Star-to-planet odds for a photon sorted out of the fundamental.

    With intensity-centered pointing the star sits slightly off axis, so
    it leaks a little light past the fundamental too; these odds fall
    linearly with the relative brightness, which is why mode sorting
    isolates companion photons so cleanly at high contrast.
    """
    if r_delta <= 0.0:
        raise ValueError("separation must be positive")
    if b < 0.0 or b > 1e-2:
        raise ValueError("relative brightness must lie in [0, 1e-2]")
    if b == 0.0:
        return 0.0
    star = (1.0 - b) * _fundamental_miss(b * r_delta)
    planet = b * _fundamental_miss((1.0 - b) * r_delta)
    return star / planet


def angular_resolution_order(phi_delta):
    """Rule-of-thumb azimuthal order needed to sample the position angle.

    The paired cosine and sine outcomes of azimuthal order m split the
    angular information in proportion to sin^2 and cos^2 of m times the
    offset d from the nearest quarter turn, so the summed information is
    available at any truncation; what grows with small d is the photon
    count needed before the weaker outcome of the pair is observed at
    all.  Orders near pi / (2 d) bring that split back to order unity.
    """
    d = _quarter_distance(phi_delta)
    if d == 0.0:
        raise ValueError(
            "position angle sits exactly on a quarter turn; rotate the basis"
        )
    return max(1, math.ceil(math.pi / (2.0 * d)))


@dataclass(frozen=True)
class InformationCurve:
    """Information values swept over scene separations and contrasts.

    points holds (separation, brightness) pairs and values one scalar
    exponent or FisherMatrix per point.  truncation records the basis or
    operator order behind the values and grid the sampling, either None
    when not applicable.
    """

    system: str
    points: tuple
    values: tuple
    truncation: int | None = None
    grid: GridSpec | None = None

    def __post_init__(self):
        if self.system not in _SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        pts = tuple((float(r), float(b)) for r, b in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", tuple(self.values))
        if len(pts) != len(self.values):
            raise ValueError("points and values must pair up")


_COMPONENTS = {"separation": 0, "angle": 1}


def write_information_csv(path, curve, component=None):
    """Write one curve as CSV under the standard five-column layout.

    Columns are system, r_delta_over_sigma, b, value, truncation, after
    a comment line stating what the value column holds.  Curves of
    FisherMatrix values need component "separation" or "angle" to pick a
    diagonal entry; scalar curves take no component.
    """
    rows = []
    for (r, b), value in zip(curve.points, curve.values):
        if isinstance(value, FisherMatrix):
            if component not in _COMPONENTS:
                raise ValueError(
                    "matrix curves need component 'separation' or 'angle'"
                )
            k = _COMPONENTS[component]
            rows.append((r, b, float(value.entries[k, k])))
        else:
            if component is not None:
                raise ValueError("scalar curves take no component")
            rows.append((r, b, float(value)))
    label = "error exponent" if component is None else f"{component} information"
    trunc = "" if curve.truncation is None else str(int(curve.truncation))
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# per-photon information curve; value column holds the {label}\n")
        f.write("system,r_delta_over_sigma,b,value,truncation\n")
        for r, b, val in rows:
            f.write(
                f"{curve.system},{r / AIRY_SIGMA:.17g},{b:.17g},{val:.17g},{trunc}\n"
            )


def write_mode_information_csv(path, basis, scenes):
    """Write separation-information shares by radial order as CSV.

    Extends the standard layout with a group column for the radial
    order; the value column holds that order's share of the total
    separation information under mode counting.
    """
    with open(path, "w", encoding="ascii") as f:
        f.write("# separation-information share by radial order, mode counting\n")
        f.write("system,r_delta_over_sigma,b,group,value,truncation\n")
        for scene in scenes:
            shares = radial_group_information(basis, scene)
            total = float(shares.sum())
            if total > 0.0:
                shares = shares / total
            for n, share in enumerate(shares):
                f.write(
                    f"spade,{scene.r_delta / AIRY_SIGMA:.17g},{scene.b:.17g},"
                    f"{n},{float(share):.17g},{basis.n_max}\n"
                )
