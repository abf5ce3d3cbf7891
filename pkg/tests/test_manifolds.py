import numpy as np
import pytest

from wrapgp.exceptions import ManifoldDomainError, ManifoldMismatchError, SphereCutLocusWarning
from wrapgp.manifolds import (
    ManifoldPoint,
    ManifoldSpec,
    TangentCoords,
    basis_coords,
    coeffs_to_sym,
    cov_log_det,
    cov_log_det_coords,
    distance,
    distance_coords,
    exp_coords,
    exp_jacobian_coords,
    exp_map,
    log_coords,
    log_map,
    project_check,
    random_points,
    sym_to_coeffs,
    tangent_basis,
)

S1, S2, S3 = ManifoldSpec.sphere(1), ManifoldSpec.sphere(2), ManifoldSpec.sphere(3)
SPD2, SPD3 = ManifoldSpec.spd(2), ManifoldSpec.spd(3)


def test_spec_dimensions():
    spec = ManifoldSpec.parse("R2xS2")
    assert (spec.ambient_dim, spec.intrinsic_dim) == (5, 4)
    assert (SPD3.ambient_dim, SPD3.intrinsic_dim) == (9, 6)
    assert str(ManifoldSpec.parse("R3xS3")) == "R3xS3"
    assert ManifoldSpec.product(ManifoldSpec.parse("R2xS2"), SPD2).intrinsic_dim == 7
    with pytest.raises(ValueError):
        ManifoldSpec.parse("R2xH2")


def test_exp_map_examples():
    p = ManifoldPoint(S2, [1.0, 0.0, 0.0])
    v = TangentCoords(p, tangent_basis(p).to_coeffs([0.0, np.pi / 2, 0.0]))
    np.testing.assert_allclose(exp_map(p, v).coords, [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(exp_map(p, TangentCoords(p, [0, 0])).coords, p.coords)

    eye = ManifoldPoint(SPD2, np.eye(2).reshape(-1))
    V = TangentCoords(eye, sym_to_coeffs(np.diag([np.log(2), np.log(3)])))
    np.testing.assert_allclose(exp_map(eye, V).coords.reshape(2, 2), np.diag([2.0, 3.0]), atol=1e-12)


def test_log_map_examples():
    p = ManifoldPoint(S2, [1.0, 0.0, 0.0])
    v = log_map(p, ManifoldPoint(S2, [0.0, 1.0, 0.0]))
    np.testing.assert_allclose(tangent_basis(p).to_ambient(v.coeffs), [0, np.pi / 2, 0], atol=1e-12)
    np.testing.assert_allclose(log_map(p, p).coeffs, 0, atol=1e-15)

    eye = ManifoldPoint(SPD2, np.eye(2).reshape(-1))
    V = log_map(eye, ManifoldPoint(SPD2, np.diag([4.0, 1.0]).reshape(-1)))
    np.testing.assert_allclose(V.coeffs, sym_to_coeffs(np.diag([np.log(4), 0.0])), atol=1e-12)


def test_distance_examples():
    a = ManifoldPoint(S2, [1.0, 0.0, 0.0])
    assert distance(a, a) == 0
    assert distance(a, ManifoldPoint(S2, [0.0, 1.0, 0.0])) == pytest.approx(np.pi / 2, abs=1e-12)
    eye = ManifoldPoint(SPD2, np.eye(2).reshape(-1))
    Y = ManifoldPoint(SPD2, (np.exp(2) * np.eye(2)).reshape(-1))
    assert distance(eye, Y) == pytest.approx(2 * np.sqrt(2), abs=1e-12)
    with pytest.raises(ManifoldMismatchError):
        distance(a, eye)


@pytest.mark.parametrize("spec", [S2, S3, SPD2, ManifoldSpec.parse("R2xS2"), ManifoldSpec.parse("R2xSPD2")],
                         ids=str)
def test_distance_metric_axioms(spec, rng):
    a, b, c = (random_points(spec, 500, rng, scale=0.5) for _ in range(3))
    d_ab = distance_coords(spec, a, b)
    d_bc = distance_coords(spec, b, c)
    d_ac = distance_coords(spec, a, c)
    np.testing.assert_allclose(d_ab, distance_coords(spec, b, a), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(distance_coords(spec, a, a), 0, atol=1e-7)
    assert np.all(d_ab >= 0)
    assert np.all(d_ac <= d_ab + d_bc + 1e-9)


def test_tangent_basis_examples():
    B = tangent_basis(ManifoldPoint(S3, [1.0, 0, 0, 0])).columns
    np.testing.assert_allclose(B, np.eye(4)[:, 1:], atol=1e-15)

    p = np.array([0.0, 0.0, 1.0])
    B = basis_coords(S2, p)
    np.testing.assert_allclose(B.T @ B, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(p @ B, 0, atol=1e-12)

    B = basis_coords(SPD2, np.eye(2).reshape(-1))
    mats = B.T.reshape(3, 2, 2)
    np.testing.assert_allclose(mats[0], [[1, 0], [0, 0]])
    np.testing.assert_allclose(mats[1], [[0, 0], [0, 1]])
    np.testing.assert_allclose(mats[2], np.array([[0, 1], [1, 0]]) / np.sqrt(2))


@pytest.mark.parametrize("spec", [S1, S2, S3, ManifoldSpec.sphere(5), SPD3, ManifoldSpec.parse("R2xS2")])
def test_basis_orthonormal(spec, rng):
    base = random_points(spec, 1000, rng)
    # points on the S^2 equator use the permuted construction
    if spec == S2:
        base[:10, 2] = 0.0
        base[:10] /= np.linalg.norm(base[:10], axis=1, keepdims=True)
    B = basis_coords(spec, base)
    np.testing.assert_allclose(np.swapaxes(B, 1, 2) @ B - np.eye(spec.intrinsic_dim), 0, atol=1e-8)
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        if c.kind == "sphere":
            np.testing.assert_allclose(np.einsum("na,nai->ni", base[:, sa], B[:, sa, si]), 0, atol=1e-8)


@pytest.mark.parametrize("spec", [S1, S2, S3, SPD2, SPD3, ManifoldSpec.parse("R2xSPD2")])
def test_exp_log_round_trip(spec, rng):
    n = 1000
    base = random_points(spec, n, rng, scale=0.5)
    v = rng.normal(size=(n, spec.intrinsic_dim))
    v *= rng.uniform(0, 2.5, size=(n, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
    q = exp_coords(spec, base, v)
    np.testing.assert_allclose(log_coords(spec, base, q), v, atol=1e-7)
    assert all(project_check(row, spec, 1e-8) for row in q)


def test_spd_vectorization_isometry(rng):
    for _ in range(1000):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 3))
        A, B = A + A.T, B + B.T
        assert sym_to_coeffs(A) @ sym_to_coeffs(B) == pytest.approx(np.sum(A * B), abs=1e-10)
        np.testing.assert_allclose(coeffs_to_sym(sym_to_coeffs(A), 3), A, atol=1e-12)


def test_cov_log_det_examples():
    p = ManifoldPoint(S2, [1.0, 0, 0])
    assert cov_log_det(p, TangentCoords(p, [0, 0])) == pytest.approx(0, abs=1e-15)
    v = TangentCoords(p, [np.pi / 2, 0.0])
    assert cov_log_det(p, v) == pytest.approx(np.log(2 / np.pi), abs=1e-12)

    eye = np.eye(2).reshape(-1)
    coeffs = sym_to_coeffs(np.diag([0.7, 0.7]))
    J = exp_jacobian_coords(SPD2, eye, coeffs, method="fd", step=1e-6)
    assert cov_log_det_coords(SPD2, eye, coeffs) == pytest.approx(np.log(abs(np.linalg.det(J))), abs=1e-4)


@pytest.mark.parametrize("spec", [S2, S3, SPD2, ManifoldSpec.parse("R2xS2")])
def test_cov_log_det_matches_jacobian(spec, rng):
    for base in random_points(spec, 50, rng, scale=0.5):
        v = rng.normal(scale=0.6, size=spec.intrinsic_dim)
        J = exp_jacobian_coords(spec, base, v, method="fd", step=1e-6)
        _, logdet = np.linalg.slogdet(J)
        assert cov_log_det_coords(spec, base, v) == pytest.approx(logdet, abs=1e-4)


def test_exp_jacobian_autograd_matches_fd(rng):
    for spec in (ManifoldSpec.parse("R2xS2"), SPD2, S3):
        base = random_points(spec, 1, rng, scale=0.5)[0]
        v = rng.normal(scale=0.5, size=spec.intrinsic_dim)
        J_fd = exp_jacobian_coords(spec, base, v, method="fd")
        J_ad = exp_jacobian_coords(spec, base, v, method="autograd")
        np.testing.assert_allclose(J_ad, J_fd, atol=1e-6)


def test_cut_locus_warning():
    with pytest.warns(SphereCutLocusWarning):
        cov_log_det_coords(S2, np.array([1.0, 0, 0]), np.array([np.pi, 0.0]))


def test_project_check_examples():
    assert project_check([0.6, 0.8], S1, 1e-6)
    assert not project_check([0.6, 0.9], S1, 1e-6)
    assert not project_check(np.diag([1.0, -0.1]).reshape(-1), SPD2, 1e-6)
    assert not project_check([1.0, 0.0], S2, 1e-6)


def test_domain_errors():
    with pytest.raises(ManifoldDomainError):
        ManifoldPoint(S2, [1.0, 1.0, 0.0])
    with pytest.raises(ManifoldDomainError):
        ManifoldPoint(SPD2, np.diag([1.0, -1.0]).reshape(-1))
    with pytest.raises(ManifoldMismatchError):
        ManifoldPoint(S2, [1.0, 0.0])
    p = ManifoldPoint(S2, [1.0, 0, 0])
    with pytest.raises(ManifoldDomainError):
        log_map(p, ManifoldPoint(S2, [-1.0, 0, 0]))
    q = ManifoldPoint(S2, [0, 1.0, 0])
    with pytest.raises(ManifoldMismatchError):
        exp_map(p, TangentCoords(q, [0.1, 0.0]))
