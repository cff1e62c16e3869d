import csv
import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from magpie_sim.gripper import (ForceModel, GraspSpec, GripperState, ObjectTooWide, OutOfRange,
                                ForceLimitExceedsModel, aperture, calibrate_linkage,
                                fingertip_force, force_to_setting, min_grip_force,
                                quantize_force, setting_to_force, write_force_trace)

FM = ForceModel()


# -- force curve ------------------------------------------------------------

def test_linear_branch_values():
    assert setting_to_force(FM, 400) == pytest.approx(9.6206, abs=1e-6)
    assert setting_to_force(FM, 200) == pytest.approx(3.3006, abs=1e-9)
    # the line crosses zero near 95.5; below that the servo delivers nothing
    assert setting_to_force(FM, 0) == 0.0
    assert setting_to_force(FM, 95) == 0.0


def test_endpoint():
    assert setting_to_force(FM, 1023) == pytest.approx(32.0, abs=1e-6)


def test_monotone_over_every_setting():
    f = [setting_to_force(FM, x) for x in range(1024)]
    assert all(b >= a for a, b in zip(f, f[1:]))
    assert all(b > a for a, b in zip(f[96:], f[97:]))


def test_quadratic_oracle():
    # value, slope at the knee and endpoint as a 3x3 linear system
    k, e = FM.knee, FM.max_setting
    A = np.array([[k * k, k, 1.0], [2 * k, 1.0, 0.0], [e * e, e, 1.0]])
    rhs = np.array([FM.slope * k + FM.intercept, FM.slope, FM.max_force])
    q = np.linalg.solve(A, rhs)
    assert np.allclose(FM.quad_coeffs, q, rtol=0, atol=1e-9 * np.abs(q).max())
    q2, q1, q0 = FM.quad_coeffs
    assert abs(q2 * k * k + q1 * k + q0 - rhs[0]) < 1e-9
    assert abs(2 * q2 * k + q1 - FM.slope) < 1e-9
    assert abs(q2 * e * e + q1 * e + q0 - 32.0) < 1e-9


def test_out_of_range():
    with pytest.raises(OutOfRange):
        setting_to_force(FM, 1024)
    with pytest.raises(OutOfRange):
        setting_to_force(FM, -1)
    with pytest.raises(OutOfRange):
        force_to_setting(FM, 33.0)


@pytest.mark.parametrize("f", [0.05, 1.0, 5.0, 9.6206, 9.7, 15.0, 31.99, 32.0])
def test_inverse_is_smallest_sufficient_setting(f):
    s = force_to_setting(FM, f)
    assert setting_to_force(FM, s) >= f - 1e-9
    if s > 0:
        assert setting_to_force(FM, s - 1) < f - 1e-9


def test_quantization():
    assert quantize_force(FM, 5.03) == pytest.approx(5.04)
    assert quantize_force(FM, 4.97) == pytest.approx(4.96)
    for f in np.linspace(0.1, 9.5, 50):
        assert abs(quantize_force(FM, f) - f) <= 0.04 + 1e-12
    assert quantize_force(FM, 2.0) == pytest.approx(2.0)
    # above the knee the command snaps to an integer setting
    q = quantize_force(FM, 20.0)
    assert q >= 20.0 and q - 20.0 < 0.08


# -- linkage ------------------------------------------------------------------

def _oracle_tip(l, theta):
    """Loop closure solved numerically for the rocker pin, independent of the model."""
    o2, o4 = np.array(l.crank_pivot), np.array(l.rocker_pivot)
    a = o2 + l.crank * np.array([math.sin(theta), math.cos(theta)])

    def closure(b):
        return [np.hypot(*(b - o4)) - l.rocker, np.hypot(*(b - a)) - l.coupler]

    roots = []
    for guess in (o4 + [l.rocker, 0.0], o4 + [-l.rocker, 0.0], a + [l.coupler, 0.0],
                  a + [-l.coupler, 0.0], a + [0, -l.coupler]):
        b, _, ok, _ = fsolve(closure, guess, full_output=True, xtol=1e-13)
        if ok == 1 and max(abs(np.array(closure(b)))) < 1e-8:
            roots.append(b)
    b = max(roots, key=lambda r: r[0])
    distal = (a - b) / l.coupler
    outward = np.array([distal[1], -distal[0]])
    return (a + l.pad[1] * distal + l.pad[0] * outward)[0]


def test_aperture_limits(gripper):
    l = gripper.linkage
    lo, hi = l.crank_range
    assert aperture(l, hi, hi) == pytest.approx(106.24, abs=0.01)
    assert aperture(l, lo, lo) == pytest.approx(0.0, abs=0.01)
    mid = l.angle_for_opening(26.56)
    assert aperture(l, mid, mid) == pytest.approx(53.12, abs=0.01)


def test_forward_kinematics_matches_loop_closure(gripper):
    l = gripper.linkage
    for t in np.linspace(*l.crank_range, 9):
        assert l.tip(t) == pytest.approx(_oracle_tip(l, t), abs=1e-7)


def test_fingertip_force_finite_work_oracle(gripper):
    l = gripper.linkage
    rng = np.random.default_rng(3)
    lo, hi = l.crank_range
    angles = rng.uniform(lo + 0.01, hi - 0.01, 20)
    tau, d = 1.2, 1e-4
    for t in angles:
        work_dx = (_oracle_tip(l, t + d) - _oracle_tip(l, t - d)) / 1000.0
        oracle = tau * 2 * d / abs(work_dx)
        assert fingertip_force(l, tau, t) == pytest.approx(oracle, rel=1e-3)


def test_fingertip_force_rejects_bad_inputs(gripper):
    l = gripper.linkage
    with pytest.raises(OutOfRange):
        fingertip_force(l, 2.0, 0.0)
    with pytest.raises(OutOfRange):
        fingertip_force(l, 1.0, l.crank_range[1] + 0.1)


def test_calibration_reproduces_shipped_linkage(gripper):
    l = gripper.linkage
    c = calibrate_linkage(l.crank, l.coupler, l.rocker, (0.0, -20.0), l.pad, l.crank_range[0])
    assert c.crank_pivot[0] == pytest.approx(l.crank_pivot[0], abs=1e-9)
    assert c.crank_range[1] == pytest.approx(l.crank_range[1], abs=1e-9)


# -- grip sizing ---------------------------------------------------------------

def test_min_grip_force():
    assert min_grip_force(GraspSpec(0.4, 1.5), 1.0) == pytest.approx(18.39, abs=0.01)
    assert min_grip_force(GraspSpec(0.4, 1.5), 0.0) == 0.0
    with pytest.raises(ValueError):
        GraspSpec(friction=0.0)
    with pytest.raises(ValueError):
        GraspSpec(safety_factor=0.5)


# -- closing on an object --------------------------------------------------------

def test_centered_grasp_contacts_together(gripper):
    out = gripper.close_on_object(GripperState(), 40.0, 0.0, 5.0)
    assert out.first == "both"
    assert out.contact_aperture_left == pytest.approx(40.0)
    assert out.state.aperture == pytest.approx(40.0)
    assert out.force_left == out.force_right == pytest.approx(quantize_force(FM, 5.0))


def test_off_center_three_phases(gripper):
    off = 10.0
    out = gripper.close_on_object(GripperState(), 50.0, off, 5.0, hold_force=6.0, release=True)
    assert out.first == "right"
    assert out.contact_aperture_right - out.contact_aperture_left == pytest.approx(2 * off)
    assert out.object_shift == 0.0
    ph = out.phase_times
    assert ph["first_contact"] < ph["both_contact"] < ph["open"]
    single = [r for r in out.trace if ph["first_contact"] + 1e-9 < r[0] < ph["both_contact"] - 1e-9]
    assert single and all(r[2] == 0.0 and r[3] > 0 for r in single)
    held = [r for r in out.trace if ph["both_contact"] < r[0] < ph["open"] - 1e-9]
    assert abs(held[-1][2] - 5.0) <= 0.08 and abs(held[-1][3] - 5.0) <= 0.08
    after = [r for r in out.trace if r[0] >= ph["open"]]
    assert all(r[2] == 0.0 and r[3] == 0.0 for r in after)
    assert out.trace[-1][1] == pytest.approx(106.24)


def test_weak_hold_pushes_object(gripper):
    out = gripper.close_on_object(GripperState(), 50.0, 10.0, 5.0, hold_force=1.0)
    assert out.object_shift < 0
    assert out.first == "right"


def test_close_rejects(gripper):
    with pytest.raises(ObjectTooWide):
        gripper.close_on_object(GripperState(), 120.0, 0.0, 5.0)
    with pytest.raises(ForceLimitExceedsModel):
        gripper.close_on_object(GripperState(), 40.0, 0.0, 40.0)


def test_force_trace_csv(gripper, tmp_path):
    out = gripper.close_on_object(GripperState(), 50.0, 10.0, 5.0, release=True)
    p = tmp_path / "trace.csv"
    write_force_trace(out.trace, p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["time", "aperture_mm", "force_left_N", "force_right_N"]
    assert len(rows) == len(out.trace) + 1
    assert float(rows[1][1]) == pytest.approx(106.24)
