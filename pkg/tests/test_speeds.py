import json
import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from kppfront.cell import principal_eigenpair
from kppfront.errors import BracketFailure, DomainError, ZeroVector
from kppfront.speeds import (
    ATLAS_CSV_COLUMNS,
    angle_vector,
    bramson_coefficient,
    build_atlas,
    direction_record,
    extended_lambda,
    extended_speed,
    minimal_speed,
    minimal_speed_details,
    spreading_speed,
    verify_minimizer_theory,
    wrap_angle,
)
from kppfront.torus import MuSpec, TorusGrid, build_field

SINE_1D = MuSpec.trig_series([((1,), 0.0, 0.5)], 1.0)
TWO_MODE = MuSpec.trig_series([((1, 0), 2.0, 0.0), ((1, 1), 0.0, 0.4)], 2.5)
LAMINAR = MuSpec.trig_series([((1, 0), 8.0, 0.0)], 10.0)
SQUARE_SYM = MuSpec.trig_series([((1, 0), 0.5, 0.0), ((0, 1), 0.5, 0.0)], 2.0)


def field(spec, n=1, N=32):
    return build_field(spec, TorusGrid(n, N))


# -- minimal speed ------------------------------------------------------------


@pytest.mark.parametrize("c,expected", [(1.0, (2.0, 1.0)), (4.0, (4.0, 2.0))])
def test_minimal_speed_homogeneous(c, expected):
    cs, lam = minimal_speed(field(MuSpec.constant(c)), [1.0])
    assert cs == pytest.approx(expected[0], abs=1e-6)
    assert lam == pytest.approx(expected[1], abs=1e-6)


def test_minimal_speed_matches_lambda_grid_oracle():
    mu = field(SINE_1D, N=64)
    cs, lam = minimal_speed(mu, [1.0])
    # exhaustive search over 10^4 lambdas
    grid = np.linspace(0.3, 3.0, 10_000)
    vals = np.array([principal_eigenpair(mu, [1.0], l, tol=1e-9).gamma / l for l in grid])
    j = int(np.argmin(vals))
    assert 0 < j < len(grid) - 1
    assert abs(cs - vals[j]) < 1e-5
    assert abs(lam - grid[j]) < 1e-3 + (grid[1] - grid[0])


def test_minimal_speed_stationarity_reported():
    r = minimal_speed_details(field(SINE_1D), [1.0])
    assert abs(r.stationarity) <= 1e-6
    lo, hi = r.bracket
    assert lo < r.lambda_star < hi


def test_minimal_speed_brent_agrees_with_golden():
    mu = field(SINE_1D)
    a = minimal_speed(mu, [1.0], method="golden")
    b = minimal_speed(mu, [1.0], method="brent")
    assert a[0] == pytest.approx(b[0], abs=1e-9)
    assert a[1] == pytest.approx(b[1], abs=1e-5)


def test_bracket_failure():
    # gamma/lam has its minimum at lambda = sqrt(mu) = 1e-4, below the search range
    with pytest.raises(BracketFailure):
        minimal_speed(field(MuSpec.constant(1e-8)), [1.0])


# -- spreading speed ------------------------------------------------------------


def test_spreading_speed_homogeneous():
    th = 2 * np.pi * np.arange(256) / 256
    w, ep, _ = spreading_speed(th, np.full(256, 2.0), angle_vector(0.3), refine=lambda t: 2.0)
    assert w == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(ep, angle_vector(0.3), atol=1e-6)


def test_spreading_speed_1d_short_circuit():
    w, ep, nev = spreading_speed(np.array([0.0]), np.array([1.7]), [-1.0])
    assert w == 1.7 and ep.tolist() == [-1.0] and nev == 0


def test_direction_record_invariants():
    mu = field(TWO_MODE, 2, 8)
    for th in (0.2, 1.3, 2.9, -2.0):
        r = direction_record(mu, angle_vector(th), directions=128)
        assert r.c_star > 0
        assert r.w_star <= r.c_star + 1e-9
        assert float(np.dot(r.e, r.e_prime)) > 0
        assert r.alpha > 0
        assert r.alpha == pytest.approx(
            bramson_coefficient(2, r.lambda_star_prime, float(np.dot(r.e, r.e_prime))), rel=1e-12)


@pytest.mark.slow
def test_spreading_speed_dense_angle_oracle():
    mu = field(LAMINAR, 2, 8)
    th0 = 0.7
    rec = direction_record(mu, angle_vector(th0), directions=256)
    angles = 2 * np.pi * np.arange(4096) / 4096
    adm = angles[np.cos(angles - th0) > 0]  # the other half is not admissible
    ratio = np.array([minimal_speed(mu, angle_vector(a), lam_guess=2.5)[0] / math.cos(a - th0) for a in adm])
    j = int(np.argmin(ratio))
    assert abs(rec.w_star - ratio[j]) < 1e-4
    assert abs(math.degrees(float(wrap_angle(rec.theta_prime - adm[j])))) < 0.1
    assert abs(rec.theta_prime - th0) > math.radians(0.5)  # the minimiser is not trivial


# -- Bramson coefficient and extensions -------------------------------------------------


@pytest.mark.parametrize("args,alpha", [((1, 1.0, 1.0), 1.5), ((2, 1.0, 1.0), 2.0), ((2, 1.3, 0.9), 2 / 1.17)])
def test_bramson_coefficient_examples(args, alpha):
    assert bramson_coefficient(*args) == pytest.approx(alpha, rel=1e-12)


@pytest.mark.parametrize("args", [(1, 0.0, 1.0), (2, 1.0, 0.0), (2, -1.0, 0.5), (2, 1.0, -0.2)])
def test_bramson_coefficient_domain(args):
    with pytest.raises(DomainError):
        bramson_coefficient(*args)


def test_extended_speed():
    mu = field(MuSpec.constant(1.0), 2, 8)
    assert extended_speed(mu, 3 * angle_vector(0.4)) == pytest.approx(6.0, abs=1e-6)
    with pytest.raises(ZeroVector):
        extended_speed(mu, [0.0, 0.0])
    with pytest.raises(ZeroVector):
        extended_lambda(mu, [0.0, 0.0])


def test_extended_lambda_gamma_invariance():
    mu = field(TWO_MODE, 2, 8)
    u = angle_vector(1.1)
    for s in (0.5, 2.0, 3.0):
        v = s * u
        lam_v, c_v = extended_lambda(mu, v), extended_speed(mu, v)
        # lambda*(v) c*(v) = gamma(u, lambda*(u)), re-evaluated directly
        c_u, lam_u = minimal_speed(mu, u)
        gamma = principal_eigenpair(mu, u, lam_u, tol=1e-12).gamma
        assert lam_v * c_v == pytest.approx(gamma, rel=1e-8)


def test_extended_speed_continuity():
    mu = field(TWO_MODE, 2, 8)
    th = np.linspace(0, 0.5, 11)
    c = np.array([extended_speed(mu, angle_vector(t)) for t in th])
    step = th[1] - th[0]
    # |dc*/dtheta| is bounded by sup|grad c*| <= max c* on the unit circle
    assert np.max(np.abs(np.diff(c))) <= c.max() * step


# -- atlas ------------------------------------------------------------------------


def test_atlas_1d_and_io(tmp_path):
    at = build_atlas(SINE_1D, 1, 32)
    assert [r.e for r in at.records] == [(1.0,), (-1.0,)]
    for r in at.records:
        assert r.w_star == r.c_star and r.e_prime == r.e
        assert r.alpha == pytest.approx(1.5 / r.lambda_star)
    # the medium is symmetric under x -> 1/2 - x, so both directions agree
    assert at.records[0].c_star == pytest.approx(at.records[1].c_star, abs=1e-8)
    at.write_json(tmp_path / "a.json")
    d = json.loads((tmp_path / "a.json").read_text())
    assert set(d) == {"mu_spec", "n", "grid_N", "records"}
    assert set(d["records"][0]) >= {"theta", "e", "lambda_star", "c_star", "theta_prime", "w_star", "alpha"}
    at.write_csv(tmp_path / "a.csv", comment="x")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "# x"
    assert tuple(lines[1].split(",")) == ATLAS_CSV_COLUMNS
    assert len(lines) == 4


@pytest.fixture(scope="module")
def square_atlas():
    return build_atlas(SQUARE_SYM, 2, 8, directions=64, gradient_step=0)


def test_atlas_sorted_and_bounds(square_atlas):
    th = square_atlas.thetas
    assert np.all(np.diff(th) > 0)
    cmin = min(r.c_star for r in square_atlas.records)
    for r in square_atlas.records:
        assert np.linalg.norm(r.e) == pytest.approx(1.0, abs=1e-14)
        assert cmin - 1e-9 <= r.w_star <= r.c_star + 1e-9


def test_atlas_lattice_rotation_symmetry(square_atlas):
    # mu(Rx) = mu(x) for the quarter turn R; 64 directions put R at 16 grid steps
    recs = square_atlas.records
    for i, r in enumerate(recs):
        q = recs[(i + 16) % 64]
        assert q.c_star == pytest.approx(r.c_star, abs=1e-7)
        assert q.w_star == pytest.approx(r.w_star, abs=1e-7)
        assert float(wrap_angle(q.theta_prime - r.theta_prime - np.pi / 2)) == pytest.approx(0.0, abs=1e-5)


def test_minimizer_check_homogeneous():
    at = build_atlas(MuSpec.constant(1.0), 2, 8, directions=360)
    rep = verify_minimizer_theory(at)
    assert rep["all_pass"]
    assert rep["directions"] == 360
    for r in at.records:
        np.testing.assert_allclose(r.e_prime, r.e, atol=1e-6)


def test_minimizer_check_1d():
    rep = verify_minimizer_theory(build_atlas(SINE_1D, 1, 32))
    assert rep["all_pass"] and rep["n"] == 1


@pytest.mark.slow
def test_minimizer_check_two_mode():
    at = build_atlas(TWO_MODE, 2, 8, directions=360)
    rep = verify_minimizer_theory(at)
    assert rep["checks"]["injectivity"]["pass"]
    assert rep["checks"]["uniqueness"]["pass"]
    assert rep["checks"]["coverage"]["pass"]
    assert rep["checks"]["gradient"]["max_rel_error"] <= 1e-2


# -- properties ---------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 30.0))
def test_scaling_homogeneous(c):
    cs, lam = minimal_speed(field(MuSpec.constant(c * c), N=8), [1.0])
    assert cs == pytest.approx(2 * c, rel=1e-7)
    assert lam == pytest.approx(c, rel=1e-4)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(0.3, 2.0))
@example(0.0, 0.625, 0.5)  # tol 1e-12 lies below the real-space round-off floor at N=64
def test_stationarity_at_lambda_star(a, b, base):
    spec = MuSpec.trig_series([((1,), a, b)], math.hypot(a, b) + base)
    mu = field(spec)
    c, lam = minimal_speed(mu, [1.0])
    f = lambda l: principal_eigenpair(mu, [1.0], l, tol=1e-12).gamma / l
    h = 1e-4 * lam
    assert abs(f(lam + h) - f(lam - h)) / (2 * h) <= 1e-6
    assert c <= f(0.9 * lam) and c <= f(1.1 * lam)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_reflection_symmetry_1d_even_medium(a, b):
    # mu even about zero gives c*(e) = c*(-e)
    spec = MuSpec.trig_series([((1,), a, 0.0), ((2,), b, 0.0)], 1.5)
    mu = field(spec)
    assert minimal_speed(mu, [1.0])[0] == pytest.approx(minimal_speed(mu, [-1.0])[0], abs=1e-8)
