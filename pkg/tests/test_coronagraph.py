"""Tests for coronagraph chains, modal extraction, and imaging."""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.special import j1

from artifact.coronagraph import (
    ELEMENT_KINDS,
    RASTER_MAGIC,
    CoronagraphOperator,
    PropagatorPlan,
    extract_operator,
    load_operator,
    lyot_stop_array,
    operator_from_json,
    operator_to_json,
    perfect_apply,
    perfect_plan,
    piaacmc_design,
    piaacmc_plan,
    prolate_c_star,
    prolate_radial,
    read_raster,
    save_operator,
    vortex_plan,
    write_raster,
    write_transmission_csv,
)
from artifact.modebasis import FourierZernikeBasis, mode_field_stack
from artifact.optics import (
    AIRY_SIGMA,
    GridSpec,
    OpticalField,
    Scene,
    inverse_propagate,
    overlap,
    pupil_disk_field,
    shifted_source_field,
)
from artifact.coronagraph import output_state_image


# ---------------------------------------------------------------------------
# raster container


def test_raster_header_layout(tmp_path):
    path = str(tmp_path / "a.raster")
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_raster(path, arr)
    with open(path, "rb") as fh:
        blob = fh.read()
    expect = struct.pack("<4sIII", b"FR32", 3, 2, 0) + arr.astype("<f4").tobytes()
    assert blob == expect
    assert RASTER_MAGIC == b"FR32"


@settings(max_examples=25, deadline=None)
@given(
    hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
        elements=st.floats(-1e6, 1e6, width=32),
    )
)
def test_raster_round_trip(tmp_path_factory, arr):
    path = str(tmp_path_factory.mktemp("raster") / "r.raster")
    write_raster(path, arr)
    back = read_raster(path)
    assert back.dtype == np.float32
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_raster_rejects_bad_payloads(tmp_path):
    path = str(tmp_path / "bad.raster")
    with pytest.raises(ValueError):
        write_raster(path, np.zeros(4, dtype=np.float32))
    with pytest.raises(ValueError):
        write_raster(path, np.zeros((2, 2), dtype=complex))
    write_raster(path, np.zeros((2, 2), dtype=np.float32))
    blob = open(path, "rb").read()
    open(path, "wb").write(b"XX32" + blob[4:])
    with pytest.raises(ValueError):
        read_raster(path)
    open(path, "wb").write(blob[:12] + struct.pack("<I", 7) + blob[16:])
    with pytest.raises(ValueError):
        read_raster(path)
    open(path, "wb").write(blob[:-4])
    with pytest.raises(ValueError):
        read_raster(path)
    open(path, "wb").write(blob[:8])
    with pytest.raises(ValueError):
        read_raster(path)


# ---------------------------------------------------------------------------
# stops and plan plumbing


def test_lyot_stop_is_inner_binary_raster(grid):
    stop = lyot_stop_array(grid)
    assert set(np.unique(stop)) <= {0.0, 1.0}
    assert np.array_equal(stop * stop, stop)
    x, y = grid.mesh()
    rho = np.hypot(x, y)
    assert rho[stop > 0].max() < 1.0
    deep = rho <= 1.0 - grid.dx
    assert np.all(stop[deep] == 1.0)


def test_plan_validates_inputs(grid):
    assert "identity" in ELEMENT_KINDS
    with pytest.raises(ValueError):
        PropagatorPlan("x", grid, (), "sideways")
    with pytest.raises(ValueError):
        PropagatorPlan("x", grid, (("mystery", np.ones((4, 4))),), "pupil")
    with pytest.raises(ValueError):
        PropagatorPlan("x", grid, (("lyot_stop", np.ones((4, 4))),), "pupil")
    with pytest.raises(ValueError):
        PropagatorPlan("x", grid, (), "pupil", np.ones((4, 4)))
    plan = PropagatorPlan("x", grid, (("identity", None),), "pupil")
    focal = OpticalField(np.zeros((grid.n_pixels,) * 2, complex), "focal", grid.half_width)
    with pytest.raises(ValueError):
        plan.apply(focal)
    small = GridSpec(n_pixels=64, half_width=16.0)
    with pytest.raises(ValueError):
        plan.apply(pupil_disk_field(small))


def test_plan_is_linear(plan_vortex, grid):
    rng = np.random.default_rng(11)
    shape = (grid.n_pixels, grid.n_pixels)
    x, y = grid.mesh()
    env = np.exp(-(x**2 + y**2) / 2.0)
    a = OpticalField(env * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)), "pupil", grid.half_width)
    b = OpticalField(env * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)), "pupil", grid.half_width)
    al, be = 0.7 - 0.2j, -0.4 + 1.1j
    mixed = OpticalField(al * a.samples + be * b.samples, "pupil", grid.half_width)
    lhs = plan_vortex.apply(mixed).samples
    rhs = al * plan_vortex.apply(a).samples + be * plan_vortex.apply(b).samples
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


# ---------------------------------------------------------------------------
# perfect design


def test_perfect_rejects_fundamental_and_passes_higher_modes(stack6, grid):
    plan = perfect_plan(stack6.field(0), grid)
    out = plan.apply(stack6.field(0))
    assert out.norm() ** 2 <= 1e-12
    for k in (1, 2, 5, 9):
        fk = stack6.field(k)
        diff = plan.apply(fk).samples - fk.samples
        assert np.linalg.norm(diff) * grid.dx <= 1e-6


def test_perfect_mismatched_fundamental_raises(grid):
    pup = pupil_disk_field(grid)
    with pytest.raises(ValueError):
        perfect_plan(pup, grid)
    small = GridSpec(n_pixels=64, half_width=16.0)
    from artifact.optics import psf_field

    with pytest.raises(ValueError):
        perfect_plan(psf_field(small), grid)


def test_perfect_shifted_source_energy(grid):
    # The transmitted energy obeys Pythagoras against the measured overlap
    # exactly; the analytic Airy overlap is grid limited at the few 1e-3
    # level by the sampled tails.
    chi = shifted_source_field((0.3, 0.0), grid)
    from artifact.optics import psf_field

    fund = psf_field(grid).normalized()
    out = perfect_apply(chi, fund)
    c = overlap(fund, chi)
    measured = out.norm() ** 2
    pythag = chi.norm() ** 2 - abs(c) ** 2
    assert abs(measured - pythag) <= 1e-10
    r = 0.3
    gamma0 = j1(2.0 * math.pi * r) / (math.pi * r)
    assert abs(measured - (1.0 - gamma0**2)) <= 5e-3


# ---------------------------------------------------------------------------
# prolate solver and piaacmc design


def test_prolate_radial_properties():
    for c in (1.0, 1.7, 2.4):
        gamma, x, w, v = prolate_radial(c)
        assert 0.0 < gamma < 1.0
        assert np.all(v > 0.0)
        assert abs(float(np.sum(w * x * v * v)) - 1.0) <= 1e-12
    g1 = prolate_radial(1.2)[0]
    g2 = prolate_radial(2.2)[0]
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    assert g1 < inv_sqrt2 < g2
    with pytest.raises(ValueError):
        prolate_radial(-1.0)


def test_prolate_critical_bandwidth():
    c_star = prolate_c_star()
    assert abs(c_star - 1.6678729536422447) <= 1e-9
    gamma = prolate_radial(c_star)[0]
    assert abs(gamma - 1.0 / math.sqrt(2.0)) <= 1e-10


def test_piaacmc_design_scalars(grid):
    d = piaacmc_design(grid)
    assert abs(d.c_value - prolate_c_star()) <= 1e-15
    assert abs(d.mask_radius - 0.2698608241) <= 2e-6
    assert abs(d.gamma_grid - 0.5) <= 1e-4
    assert abs(d.gamma_grid - 0.49999199569048) <= 1e-8


def test_piaacmc_design_arrays(grid):
    d = piaacmc_design(grid)
    support = d.lyot_stop > 0.0
    assert np.array_equal(d.lyot_stop, lyot_stop_array(grid))
    # pi-phase spot: -1 inside, +1 outside, fractional only on the rim
    assert d.focal_mask.min() >= -1.0 and d.focal_mask.max() <= 1.0
    assert float(np.mean(np.abs(d.focal_mask) == 1.0)) >= 0.999
    # remap strengths stay order one and invert exactly on the support
    assert 0.82 <= d.apodizer[support].min() <= 0.86
    assert 1.17 <= d.apodizer[support].max() <= 1.20
    prod = d.apodizer[support] * d.inverse_apodizer[support]
    assert np.max(np.abs(prod - 1.0)) <= 1e-12
    assert np.all(d.apodizer[~support] == 0.0)
    # the apodized profile carries unit energy on the grid
    energy = float(np.sum(d.apodized_profile**2)) * grid.dx**2
    assert abs(energy - 1.0) <= 1e-12


def test_piaacmc_null_and_throughput(plan_piaacmc, grid):
    pup = pupil_disk_field(grid)
    null = plan_piaacmc.apply(pup).norm() ** 2
    assert null <= 1e-6
    assert math.sqrt(null) <= 1e-3
    expected = {0.5: 0.806620, 1.0: 0.965668, 3.0: 0.978682}
    for r, ref in expected.items():
        chi = shifted_source_field((r, 0.0), grid)
        out = plan_piaacmc.apply(inverse_propagate(chi))
        thr = out.norm() ** 2 / chi.norm() ** 2
        assert abs(thr - ref) <= 1e-3
    assert expected[3.0] >= 0.8


# ---------------------------------------------------------------------------
# vortex design


def test_vortex_null_and_throughput(plan_vortex, grid):
    pup = pupil_disk_field(grid)
    null = plan_vortex.apply(pup).norm() ** 2
    assert null <= 1e-3
    assert abs(null - 1.931e-4) <= 2e-5
    for r, ref in {1.0: 0.777516, 3.0: 0.914073}.items():
        chi = shifted_source_field((r, 0.0), grid)
        thr = plan_vortex.apply(inverse_propagate(chi)).norm() ** 2 / chi.norm() ** 2
        assert abs(thr - ref) <= 1e-3


def test_vortex_doughnut_image(plan_vortex, grid):
    chi = shifted_source_field((0.5 * AIRY_SIGMA, 0.0), grid)
    img = np.abs(plan_vortex.apply(inverse_propagate(chi)).samples) ** 2
    c = grid.n_pixels // 2
    assert img[c, c] <= 1e-2 * img.max()


def test_vortex_rotational_covariance(plan_vortex, grid):
    r = 0.5 * AIRY_SIGMA

    def image(s):
        chi = shifted_source_field(s, grid)
        return np.abs(plan_vortex.apply(inverse_propagate(chi)).samples) ** 2

    ix = image((r, 0.0))
    iy = image((0.0, r))
    # quarter-turn of the source rotates the image; the one-pixel roll
    # recenters the even-sized fftshifted grid
    rot = np.roll(np.rot90(ix, 3), 1, axis=1)
    assert np.linalg.norm(rot - iy) <= 1e-4 * np.linalg.norm(iy)


def test_vortex_zero_charge_rejected(grid):
    with pytest.raises(ValueError):
        vortex_plan(grid, charge=0)


# ---------------------------------------------------------------------------
# passivity


def _probe_fields(stack6, grid):
    rng = np.random.default_rng(7)
    fields = [shifted_source_field((r, 0.0), grid) for r in (0.3, 1.0, 3.0)]
    co = rng.standard_normal(stack6.count) + 1j * rng.standard_normal(stack6.count)
    fields.append(stack6.synthesize(co).normalized())
    return fields


def test_perfect_and_vortex_are_passive(stack6, plan_vortex, grid):
    plan_p = perfect_plan(stack6.field(0), grid)
    for f in _probe_fields(stack6, grid):
        assert plan_p.apply(f).norm() <= f.norm() * (1.0 + 1e-6)
        assert plan_vortex.apply(inverse_propagate(f)).norm() <= f.norm() * (1.0 + 1e-6)


def test_piaacmc_passive_on_sources(stack6, plan_piaacmc, grid):
    # The multiplicative remap model contracts every physical point-source
    # field; ring-like modal inputs can gain about a percent, bounded by
    # the operator-level ceiling checked in the extraction tests.
    for f in _probe_fields(stack6, grid):
        assert plan_piaacmc.apply(inverse_propagate(f)).norm() <= f.norm() * (1.0 + 1e-6)


# ---------------------------------------------------------------------------
# modal extraction


def test_extraction_guard_rejects_deep_truncation(plan_vortex):
    with pytest.raises(ValueError):
        extract_operator(plan_vortex, FourierZernikeBasis(31))


def test_extraction_grid_mismatch(plan_vortex):
    small = GridSpec(n_pixels=64, half_width=16.0)
    stack = mode_field_stack(FourierZernikeBasis(1), small)
    with pytest.raises(ValueError):
        extract_operator(plan_vortex, stack)


def test_perfect_spectrum_structure(op_perfect20):
    a = np.abs(op_perfect20.transmissions)
    assert a[0] <= 1e-8
    assert np.max(np.abs(a[1:] - 1.0)) <= 1e-3
    assert np.all(np.diff(a) >= -1e-12)


def test_operator_invariants(op_piaacmc20):
    v = op_piaacmc20.mode_coefficients
    eye = v.conj().T @ v
    assert np.max(np.abs(eye - np.eye(v.shape[0]))) <= 1e-10
    a = np.abs(op_piaacmc20.transmissions)
    assert np.all(np.diff(a) >= -1e-12)
    assert a.max() <= 1.05
    assert op_piaacmc20.truncation == op_piaacmc20.fields.count


def test_operator_constructor_validations(grid):
    stack = mode_field_stack(FourierZernikeBasis(1), grid)
    count = stack.count
    tau = np.zeros(count, complex)
    vmat = np.eye(count, dtype=complex)
    with pytest.raises(ValueError):
        CoronagraphOperator("x", stack, tau[:-1], vmat, count)
    with pytest.raises(ValueError):
        CoronagraphOperator("x", stack, tau, vmat[:, :-1], count)
    with pytest.raises(ValueError):
        CoronagraphOperator("x", stack, tau, vmat, count + 1)
    hot = tau.copy()
    hot[0] = 1.5
    with pytest.raises(ValueError):
        CoronagraphOperator("x", stack, hot, vmat, count)


def _tip_tilt_span_overlap(op, positions):
    basis = op.fields.basis
    tt_rows = [k for k, idx in enumerate(basis.modes) if idx.n == 1]
    assert len(tt_rows) == 2
    v = op.mode_coefficients
    return sum(float(np.sum(np.abs(v[tt_rows, p]) ** 2)) for p in positions) / 2.0


def test_piaacmc_tip_tilt_pair(plan_piaacmc, grid):
    stack3 = mode_field_stack(FourierZernikeBasis(3), grid)
    op = extract_operator(plan_piaacmc, stack3)
    ov = _tip_tilt_span_overlap(op, (1, 2))
    assert abs(ov - 0.9379) <= 2e-3
    assert ov > 0.90


def test_vortex_null_floor_structure(plan_vortex, grid):
    # A charge-2 vortex nulls exactly one combination of each conjugate-m
    # pair: the null floor holds one nearly pure tip-tilt combination
    # while the complementary combination transmits at high throughput.
    stack2 = mode_field_stack(FourierZernikeBasis(2), grid)
    op = extract_operator(plan_vortex, stack2)
    a = np.abs(op.transmissions)
    floor = [k for k in range(op.truncation) if a[k] <= 1e-2]
    assert len(floor) == 3
    tt = [2.0 * _tip_tilt_span_overlap(op, (k,)) for k in range(op.truncation)]
    assert max(tt[k] for k in floor) >= 0.9
    passing = [k for k in range(op.truncation) if a[k] >= 0.9]
    assert max(tt[k] for k in passing) >= 0.9


def _spatial_recon_error(op, plan, shift, grid):
    chi = shifted_source_field(shift, grid)
    fin = inverse_propagate(chi) if plan.input_domain == "pupil" else chi
    direct = plan.apply(fin).samples
    stack = op.fields
    modal = stack.synthesize(op.apply_coefficients(stack.project(chi))).samples
    return np.linalg.norm(direct - modal) / np.linalg.norm(direct)


@pytest.mark.parametrize("shift", [(0.3, 0.0), (0.7, 0.4), (1.0, 0.0)])
def test_reconstruction_spatial_perfect(shift, op_perfect20, plan_perfect20, grid):
    # The perfect chain is Hermitian, so the one-sided singular-mode form
    # reconstructs it; for the non-normal chains see the envelope test.
    assert _spatial_recon_error(op_perfect20, plan_perfect20, shift, grid) <= 0.02


def test_reconstruction_nonnormal_envelopes(
    op_piaacmc20, op_vortex20, plan_piaacmc, plan_vortex, grid
):
    # The remap pair makes the compressed piaacmc matrix mildly non-normal
    # and the charge-2 phase shifts angular momentum by two, so the
    # one-sided form cannot reproduce those chains spatially; pin the
    # measured envelopes so a regression in either direction is caught.
    e_p = _spatial_recon_error(op_piaacmc20, plan_piaacmc, (0.7, 0.4), grid)
    e_v = _spatial_recon_error(op_vortex20, plan_vortex, (0.7, 0.4), grid)
    assert 0.02 <= e_p <= 0.2
    assert 0.5 <= e_v <= 2.0


@pytest.mark.parametrize("shift", [(0.3, 0.0), (0.7, 0.4), (1.0, 0.0)])
def test_reconstruction_energy_all_designs(
    shift, op_perfect20, op_piaacmc20, op_vortex20, plan_perfect20, plan_piaacmc, plan_vortex, grid
):
    # Singular pairs guarantee the output energy identity regardless of
    # normality; truncation at n_max=20 must hold it to 2% for |s| <= 1.
    chi = shifted_source_field(shift, grid)
    pairs = (
        (op_perfect20, plan_perfect20),
        (op_piaacmc20, plan_piaacmc),
        (op_vortex20, plan_vortex),
    )
    for op, plan in pairs:
        fin = inverse_propagate(chi) if plan.input_domain == "pupil" else chi
        e_direct = plan.apply(fin).norm() ** 2
        z = op.mode_coefficients.conj().T @ op.fields.project(chi)
        e_modal = float(np.sum(np.abs(op.transmissions) ** 2 * np.abs(z) ** 2))
        assert abs(e_modal - e_direct) <= 0.02 * e_direct


def test_cumulative_low_order_ordering(op_piaacmc20, op_vortex20):
    a_v = np.abs(op_vortex20.transmissions)
    a_p = np.abs(op_piaacmc20.transmissions)
    assert float(np.sum(a_v[:10] ** 2)) < float(np.sum(a_p[:10] ** 2))


def test_extracted_operators_passive_where_physical(op_perfect20, op_vortex20):
    assert np.max(np.abs(op_perfect20.transmissions)) <= 1.0 + 1e-6
    assert np.max(np.abs(op_vortex20.transmissions)) <= 1.0 + 1e-6


def test_apply_matches_apply_coefficients(op_perfect20):
    rng = np.random.default_rng(3)
    stack = op_perfect20.fields
    co = rng.standard_normal(stack.count) + 1j * rng.standard_normal(stack.count)
    field = stack.synthesize(co)
    out = op_perfect20.apply(field)
    ref = stack.synthesize(op_perfect20.apply_coefficients(co))
    assert np.linalg.norm(out.samples - ref.samples) <= 1e-6 * np.linalg.norm(ref.samples)


# ---------------------------------------------------------------------------
# imaging


def test_output_state_image_star_suppression(op_perfect20):
    sc = Scene(r_delta=0.2 * AIRY_SIGMA, phi_delta=0.0, b=1e-9)
    star = output_state_image(op_perfect20, sc, star_only=True)
    assert star.max() <= 1e-8


def test_output_state_image_two_lobes(op_perfect20, grid):
    sc = Scene(r_delta=0.2 * AIRY_SIGMA, phi_delta=0.0, b=1e-9)
    img = output_state_image(op_perfect20, sc)
    inner = img[1:-1, 1:-1]
    neigh = [img[:-2, 1:-1], img[2:, 1:-1], img[1:-1, :-2], img[1:-1, 2:],
             img[:-2, :-2], img[2:, 2:], img[:-2, 2:], img[2:, :-2]]
    peaks = inner > 0.1 * img.max()
    for nb in neigh:
        peaks &= inner > nb
    assert int(peaks.sum()) == 2


def test_output_state_image_detected_energy_modal(op_vortex20, plan_vortex, grid):
    # contract value 1e-3; the compression drops the output energy pushed
    # above order 20 by the chain (the phase mask shifts angular momentum
    # by 2), which floors the modal/grid agreement near 2e-2, so this is
    # expected to fail until the contract number is revisited
    sc = Scene(r_delta=AIRY_SIGMA, phi_delta=0.3, b=0.1)
    modal = output_state_image(op_vortex20, sc)
    direct = output_state_image(plan_vortex, sc)
    e_modal = float(np.sum(modal)) * grid.dx**2
    e_direct = float(np.sum(direct)) * grid.dx**2
    rel = abs(e_modal - e_direct) / e_direct
    assert rel <= 1e-3, f"relative detected-energy gap {rel:.3e}"


# ---------------------------------------------------------------------------
# serialization


def test_operator_json_round_trip(op_vortex20, tmp_path):
    payload = operator_to_json(op_vortex20)
    clone = operator_from_json(payload, op_vortex20.fields)
    assert clone.name == op_vortex20.name
    assert clone.truncation == op_vortex20.truncation
    assert np.array_equal(clone.transmissions, op_vortex20.transmissions)
    assert np.array_equal(clone.mode_coefficients, op_vortex20.mode_coefficients)
    path = str(tmp_path / "op.json")
    save_operator(path, op_vortex20)
    again = load_operator(path, op_vortex20.fields)
    assert np.array_equal(again.transmissions, op_vortex20.transmissions)


def test_operator_json_mismatch_raises(op_vortex20, grid):
    payload = operator_to_json(op_vortex20)
    other = mode_field_stack(FourierZernikeBasis(1), grid)
    with pytest.raises(ValueError):
        operator_from_json(payload, other)
    wrong = dict(payload)
    wrong["grid"] = {"n_pixels": 64, "half_width": 16.0}
    with pytest.raises(ValueError):
        operator_from_json(wrong, op_vortex20.fields)


def test_transmission_csv(op_perfect20, tmp_path):
    path = str(tmp_path / "tau.csv")
    write_transmission_csv(path, op_perfect20, comment="perfect design")
    lines = open(path).read().splitlines()
    assert lines[0] == "# perfect design"
    assert lines[1] == "mode_index,transmission_sq"
    assert len(lines) == 2 + op_perfect20.truncation
    idx, val = lines[2].split(",")
    assert int(idx) == 0
    assert float(val) == abs(op_perfect20.transmissions[0]) ** 2
