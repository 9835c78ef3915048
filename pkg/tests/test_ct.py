import math
import warnings

import numpy as np
import pytest
from shapely.geometry import LineString, box

from hfdaep.ct import (
    CtReconConfig,
    FanGeometry,
    GeometryError,
    NoiseModel,
    Sinogram,
    add_ct_noise,
    backproject,
    fbp,
    pwls_objective,
    pwls_step,
    ray_endpoints,
    ray_lengths,
    reconstruct_ct,
    siddon_project,
    surrogate_curvature,
    system_matrix,
)
from hfdaep.dae import identity_model
from hfdaep.phantoms import shepp_logan
from hfdaep.prior import PriorContext, prior_gradient

from helpers import clip_length, random_model


def small_geometry(pixels=32, views=45, bins=64):
    return FanGeometry(image_pixels=pixels, detector_bins=bins,
                       view_angles=tuple(2 * np.pi * np.arange(views) / views))


def test_zero_image_projects_to_zero():
    g = small_geometry()
    assert not np.any(siddon_project(np.zeros((32, 32)), g).data)


def test_unit_image_gives_chord_lengths():
    g = FanGeometry()
    rays = ray_endpoints(g)
    got = siddon_project(np.ones((128, 128)), g).data
    want = clip_length(*np.moveaxis(rays, -1, 0), g.image_extent / 2)
    assert want.max() > 0
    assert np.max(np.abs(got - want) / np.maximum(want, 1.0)) < 1e-10


def test_per_pixel_lengths_match_polygon_clipping():
    g = small_geometry(pixels=8, views=12, bins=16)
    rays = ray_endpoints(g)
    ps = g.pixel_size
    half = g.image_extent / 2
    rng = np.random.default_rng(0)
    for _ in range(25):
        v, b = rng.integers(g.n_views), rng.integers(g.detector_bins)
        sx, sy, px, py = rays[v, b]
        line = LineString([(sx, sy), (px, py)])
        want = np.zeros(64)
        for i in range(8):
            for j in range(8):
                x0 = -half + j * ps
                y1 = half - i * ps
                want[i * 8 + j] = line.intersection(box(x0, y1 - ps, x0 + ps, y1)).length
        idx, lens = ray_lengths(g, v, b)
        got = np.zeros(64)
        np.add.at(got, idx, lens)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_dot_product_adjoint():
    g = small_geometry(pixels=48, views=60, bins=96)
    rng = np.random.default_rng(1)
    u = rng.standard_normal((48, 48))
    s = rng.standard_normal((60, 96))
    lhs = np.sum(siddon_project(u, g).data * s)
    rhs = np.sum(u * backproject(s, g))
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


def test_system_matrix_agrees_with_operator():
    g = small_geometry(pixels=10, views=8, bins=12)
    u = np.random.default_rng(2).random((10, 10))
    np.testing.assert_allclose(system_matrix(g) @ u.ravel(),
                               siddon_project(u, g).data.ravel(), atol=1e-12)


def test_source_inside_image_rejected():
    with pytest.raises(GeometryError):
        FanGeometry(source_to_center=10.0, image_extent=20.0)
    with pytest.raises(GeometryError):
        siddon_project(np.zeros((4, 4)), small_geometry())


def test_sparse_views_and_sidecar():
    g = FanGeometry()
    for v in (48, 64, 80):
        sub = g.sparse(v)
        assert sub.n_views == v
        assert set(sub.view_angles) <= set(g.view_angles)
        assert list(sub.view_angles) == sorted(sub.view_angles)
    back = FanGeometry.from_sidecar(g.sparse(64).sidecar())
    assert back == g.sparse(64)


def test_noise_negligible_when_f_tiny():
    g = small_geometry()
    s = siddon_project(shepp_logan(32), g)
    noisy = add_ct_noise(s, NoiseModel(s.data, f=1e-12), seed=0)
    assert np.max(np.abs(noisy.data - s.data)) < 1e-4


def test_noise_variance_unit_case():
    assert NoiseModel(np.zeros(3), f=1.0, T=1.0).variance == pytest.approx(np.ones(3))


def test_noise_monte_carlo_variance():
    n = 100_000
    g = FanGeometry(detector_bins=n, view_angles=(0.0,))
    s = Sinogram(np.ones((1, n)), g)
    noisy = add_ct_noise(s, NoiseModel(s.data, f=1.0, T=2.0), seed=3)
    var = np.var(noisy.data - 1.0)
    assert abs(var / math.exp(0.5) - 1) < 0.03


def test_fbp_zero_and_linearity():
    g = small_geometry()
    assert not np.any(fbp(Sinogram(np.zeros((45, 64)), g)))
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 45, 64))
    np.testing.assert_allclose(fbp(Sinogram(2 * a - 3 * b, g)),
                               2 * fbp(Sinogram(a, g)) - 3 * fbp(Sinogram(b, g)), atol=1e-10)


def test_fbp_uniform_disc():
    g = FanGeometry()
    radius = 6.0
    sx, sy, px, py = np.moveaxis(ray_endpoints(g), -1, 0)
    dist = np.abs(sx * py - sy * px) / np.hypot(px - sx, py - sy)
    proj = 2 * np.sqrt(np.clip(radius ** 2 - dist ** 2, 0, None))
    img = fbp(Sinogram(proj, g))
    c = (np.arange(128) + 0.5) * g.pixel_size - 10
    r = np.hypot(c[None, :], c[:, None])
    truth = (r <= radius).astype(float)
    assert abs(img[r < radius - 1].mean() - 1) < 0.05
    assert np.linalg.norm(img - truth) / np.linalg.norm(truth) < 0.10


def test_step_keeps_consistent_image():
    g = small_geometry()
    u = shepp_logan(32)
    np.testing.assert_array_equal(pwls_step(u, siddon_project(u, g)), u)


def test_single_pixel_single_ray():
    g = FanGeometry(image_extent=1.0, image_pixels=1, detector_width=0.1, detector_bins=1,
                    view_angles=(0.0,))
    y = Sinogram(np.array([[0.25]]), g)
    assert siddon_project(np.ones((1, 1)), g).data[0, 0] == pytest.approx(1.0)
    assert pwls_step(np.ones((1, 1)), y)[0, 0] == pytest.approx(0.25)
    # with a prior term: u - (h (h u - y) + lam g) / (h^2 + lam)
    out = pwls_step(np.ones((1, 1)), y, lam=2.0, grad=np.array([[0.5]]))
    assert out[0, 0] == pytest.approx(1 - (0.75 + 1.0) / 3.0)


def test_objective_monotone_with_frozen_target():
    g = small_geometry(views=30)
    rng = np.random.default_rng(5)
    truth = shepp_logan(32)
    y = add_ct_noise(siddon_project(truth, g), NoiseModel(np.zeros((30, 64)), f=1e-3, T=1.0))
    ctx = PriorContext(random_model(4, seed=5), precision="float64")
    w = rng.uniform(0.5, 2.0, y.data.shape)
    curv = surrogate_curvature(g, w)
    lam = 50.0
    u = fbp(y)
    for _ in range(50):
        grad = prior_gradient(ctx, u)
        z = u - grad
        before = pwls_objective(u, y, w, lam, z)
        u = pwls_step(u, y, lam, grad, w, curv)
        assert pwls_objective(u, y, w, lam, z) <= before * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_data_term_decreases_without_prior(seed):
    g = small_geometry(views=20)
    rng = np.random.default_rng(seed)
    y = Sinogram(siddon_project(rng.random((32, 32)), g).data
                 + 0.1 * rng.standard_normal((20, 64)), g)
    u = rng.random((32, 32))
    w = np.ones_like(y.data)
    before = pwls_objective(u, y, w)
    assert pwls_objective(pwls_step(u, y), y, w) < before


def test_uncovered_pixels_left_unchanged():
    g = FanGeometry(image_pixels=16, detector_width=2.0, detector_bins=4, view_angles=(0.0,))
    u = np.random.default_rng(6).random((16, 16))
    y = Sinogram(np.zeros((1, 4)), g)
    holes = surrogate_curvature(g, np.ones((1, 4))) == 0
    assert holes.any()
    with pytest.warns(RuntimeWarning, match="no ray coverage"):
        out = pwls_step(u, y)
    np.testing.assert_array_equal(out[holes], u[holes])


def test_identity_prior_beats_fbp_on_dense_views():
    g = FanGeometry(image_pixels=64, detector_bins=256).sparse(180)
    truth = shepp_logan(64)
    y = siddon_project(truth, g)
    cfg = CtReconConfig(PriorContext(identity_model(4)), lam=1.0, iterations=50)
    u, trace = reconstruct_ct(y, cfg, truth=truth)
    err = np.linalg.norm(u - truth) / np.linalg.norm(truth)
    err_fbp = np.linalg.norm(fbp(y) - truth) / np.linalg.norm(truth)
    print(f"rel L2: pwls {err:.4f} fbp {err_fbp:.4f}")
    assert err < err_fbp
    assert len(trace) == 50 and "psnr" in trace[0]


def test_config_validation():
    with pytest.raises(ValueError):
        CtReconConfig(None, lam=-1.0)
    with pytest.raises(ValueError):
        CtReconConfig(None, weighting="huber")


def test_sinogram_shape_checked():
    with pytest.raises(GeometryError):
        Sinogram(np.zeros((3, 3)), small_geometry())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Sinogram(np.zeros((45, 64)), small_geometry())
