import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcorner.subpix import (
    INVALID,
    REFINERS,
    SubpixelOffset,
    com_peak,
    edge_approx,
    gaussian_peak,
    mixed_refine,
    parabolic_peak,
    refine,
    surface_fit_saddle,
)
from xcorner.synthgen import CornerSceneSpec, render_corner


def _plus(center, h, v, size=5):
    m = np.zeros((size, size))
    c = size // 2
    m[c, c - 1 : c + 2] = h
    m[c - 1 : c + 2, c] = v
    m[c, c] = center
    return m


def _field(f, size=9):
    d = np.arange(size, dtype=np.float64) - size // 2
    yy, xx = np.meshgrid(d, d, indexing="ij")
    return f(xx, yy)


def test_gaussian_recovers_sampled_gaussian():
    t = np.exp(-((np.arange(-1, 2) - 0.25) ** 2))
    np.testing.assert_allclose(t, [0.2096, 0.9394, 0.5698], atol=1e-4)
    o = gaussian_peak(_plus(t[1], t, t), (2, 2))
    assert o.valid and o.source == "gauss"
    assert abs(o.dx - 0.25) <= 1e-12 and abs(o.dy - 0.25) <= 1e-12


def test_gaussian_symmetric_and_invalid():
    o = gaussian_peak(_plus(1.0, [0.5, 1.0, 0.5], [0.3, 1.0, 0.3]), (2, 2))
    assert (o.dx, o.dy) == (0.0, 0.0)
    assert not gaussian_peak(_plus(1.0, [1.0, 1.0, 0.5], [0.5, 1.0, 0.5]), (2, 2)).valid
    assert not gaussian_peak(_plus(1.0, [0.0, 1.0, 0.5], [0.5, 1.0, 0.5]), (2, 2)).valid  # log of zero
    assert not gaussian_peak(np.ones((5, 5)), (0, 2)).valid  # border


def test_parabolic_examples():
    o = parabolic_peak(_plus(1.0, [0.2, 1.0, 0.6], [0.5, 1.0, 0.5]), (2, 2))
    assert o.dx == pytest.approx(1 / 6) and o.dy == 0.0
    assert not parabolic_peak(np.full((5, 5), 0.7), (2, 2)).valid


def test_com_examples():
    m = np.zeros((9, 9))
    m[4, 4] = 1.0
    assert (com_peak(m, (4, 4)).dx, com_peak(m, (4, 4)).dy) == (0.0, 0.0)
    m[4, 5] = 1.0
    assert com_peak(m, (4, 4)).dx == pytest.approx(0.5)
    m = np.zeros((9, 9))
    m[4, 3], m[4, 5] = 1.0, 3.0
    assert com_peak(m, (4, 4)).dx == pytest.approx(0.5)
    assert not com_peak(np.zeros((9, 9)), (4, 4)).valid
    # negative mass is clamped, not subtracted
    m = np.zeros((9, 9))
    m[4, 4], m[4, 0] = 1.0, -5.0
    assert com_peak(m, (4, 4)).dx == 0.0


def test_surface_examples():
    o = surface_fit_saddle(_field(lambda x, y: x * y), (4, 4))
    assert o.valid and abs(o.dx) < 1e-12 and abs(o.dy) < 1e-12
    o = surface_fit_saddle(_field(lambda x, y: (x - 0.3) * (y + 0.2)), (4, 4))
    assert abs(o.dx - 0.3) <= 1e-9 and abs(o.dy + 0.2) <= 1e-9
    assert not surface_fit_saddle(_field(lambda x, y: x * x + y * y), (4, 4)).valid


@settings(max_examples=50, deadline=None)
@given(
    sx=st.floats(-0.9, 0.9),
    sy=st.floats(-0.9, 0.9),
    a=st.floats(0.2, 3.0),
    c=st.floats(-1.0, 1.0),
    k=st.floats(-2, 2),
)
def test_surface_exact_on_random_saddles(sx, sy, a, c, k):
    # a(x-sx)(y-sy) + c((x-sx)^2 - (y-sy)^2) is always indefinite
    img = _field(lambda x, y: a * (x - sx) * (y - sy) + c * ((x - sx) ** 2 - (y - sy) ** 2) + k)
    o = surface_fit_saddle(img, (4, 4))
    assert o.valid
    assert abs(o.dx - sx) <= 1e-9 and abs(o.dy - sy) <= 1e-9


def test_surface_uses_rounded_point():
    o = surface_fit_saddle(_field(lambda x, y: (x - 0.3) * (y + 0.2)), (4.4, 3.8))
    assert o.apply((4.4, 3.8)) == pytest.approx((4.3, 3.8))


def test_edge_centered_corner():
    img, gt = render_corner(CornerSceneSpec(image_size=31, transition_band=False))
    o = edge_approx(img, (15, 15))
    assert o.valid and abs(o.dx) <= 1e-3 and abs(o.dy) <= 1e-3


@pytest.mark.parametrize("rot", [0.0, 10.0, 30.0])
def test_edge_recovers_renderer_shift(rot):
    spec = CornerSceneSpec(image_size=31, rotation_deg=rot, transition_band=False, apply_blur=True, subpixel_shift=(0.3, -0.1))
    img, gt = render_corner(spec)
    x, y = edge_approx(img, (15, 15)).apply((15, 15))
    assert np.hypot(x - gt.corners[0, 0], y - gt.corners[0, 1]) <= 0.05


def test_edge_invalid_cases():
    assert not edge_approx(np.full((21, 21), 0.4), (10, 10)).valid
    # gradients all along x: singular
    assert not edge_approx(_field(lambda x, y: x, 21), (10, 10)).valid
    assert not edge_approx(np.random.default_rng(0).random((21, 21)), (2, 10)).valid


def test_mixed_average_and_fallbacks():
    img = _field(lambda x, y: (x - 0.2) * (y - 0.0))
    t = np.exp(-((np.arange(-1, 2) - 0.4) ** 2))
    u = np.exp(-((np.arange(-1, 2) - 0.2) ** 2))
    resp = np.zeros((9, 9))
    resp[4, 3:6] = t
    resp[3:6, 4] = u
    resp[4, 4] = max(t[1], u[1])
    g = gaussian_peak(resp, (4, 4))
    s = surface_fit_saddle(img, (4, 4))
    o = mixed_refine(img, resp, (4, 4))
    assert o.source == "mixed"
    assert o.dx == pytest.approx(0.5 * (g.dx + s.dx)) and o.dy == pytest.approx(0.5 * (g.dy + s.dy))
    # only surface valid
    assert mixed_refine(img, np.zeros((9, 9)), (4, 4)) == s
    # only gaussian valid
    assert mixed_refine(np.zeros((9, 9)), resp, (4, 4)) == g
    assert mixed_refine(np.zeros((9, 9)), np.zeros((9, 9)), (4, 4)) == INVALID


def test_mixed_spec_arithmetic():
    # mean of refined points (10.2, 5.0) and (10.4, 5.2)
    a, b = SubpixelOffset(0.2, 0.0, True), SubpixelOffset(0.4, 0.2, True)
    mx = 0.5 * (a.apply((10, 5))[0] + b.apply((10, 5))[0])
    my = 0.5 * (a.apply((10, 5))[1] + b.apply((10, 5))[1])
    assert (mx, my) == pytest.approx((10.3, 5.1))


@settings(max_examples=80, deadline=None)
@given(
    c=st.floats(0.5, 2.0),
    l=st.floats(0.01, 1.0),
    r=st.floats(0.01, 1.0),
    u=st.floats(0.01, 1.0),
    d=st.floats(0.01, 1.0),
)
def test_peak_offsets_bounded_by_half(c, l, r, u, d):
    resp = _plus(c, [l * c * 0.999, c, r * c * 0.999], [u * c * 0.999, c, d * c * 0.999])
    for fn in (gaussian_peak, parabolic_peak):
        o = fn(resp, (2, 2))
        assert o.valid and abs(o.dx) <= 0.5 and abs(o.dy) <= 0.5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20), tx=st.integers(-3, 3), ty=st.integers(-3, 3))
def test_refiners_translation_covariant(seed, tx, ty):
    rng = np.random.default_rng(seed)
    img = rng.random((30, 30))
    resp = rng.random((30, 30))
    resp[15, 15] = 2.0
    img2 = np.roll(img, (ty, tx), axis=(0, 1))
    resp2 = np.roll(resp, (ty, tx), axis=(0, 1))
    for m in ("gauss", "parabolic", "com", "surface", "mixed"):
        a = refine(m, img, resp, (15, 15))
        b = refine(m, img2, resp2, (15 + tx, 15 + ty))
        assert a.valid == b.valid
        assert a.dx == pytest.approx(b.dx, abs=1e-9) and a.dy == pytest.approx(b.dy, abs=1e-9)


def test_refine_dispatch():
    img, _ = render_corner(CornerSceneSpec(image_size=31, transition_band=False, apply_blur=True))
    resp = _field(lambda x, y: np.exp(-(x * x + y * y)), 31)
    sources = {m: refine(m, img, resp, (15, 15)).source for m in REFINERS}
    assert sources == {
        "mixed": "mixed",
        "gauss": "gauss",
        "parabolic": "parabolic",
        "com": "com",
        "surface": "surface",
        "edge": "edge",
        "none": "none",
    }
    assert refine("none", img, resp, (15, 15)) == INVALID
    with pytest.raises(ValueError):
        refine("bogus", img, resp, (15, 15))


def test_apply():
    assert SubpixelOffset(0.25, -0.5, True).apply((3, 4)) == (3.25, 3.5)
