import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simreal.phantom import (
    Defect,
    GreyImage,
    ProjectionGeometry,
    RenderProfile,
    WheelPhantom,
    attenuation_line_integral,
    gaussian_blur,
    optical_depth_map,
    pre_noise_intensity,
    render,
    thickness_at,
)

CLEAN = RenderProfile(flux_i0=60000.0)


def wheel(**kw):
    base = dict(outer_radius=60, hub_radius=16, rim_width=12, spoke_count=4,
                spoke_half_width=0.2, base_thickness=20, mu=0.05)
    base.update(kw)
    return WheelPhantom(**base)


def reference_thickness(ph: WheelPhantom, x: float, y: float) -> float:
    """Sector membership written out longhand, independent of the vectorized path."""
    r = math.hypot(x, y)
    if r > ph.outer_radius:
        return 0.0
    if r >= ph.outer_radius - ph.rim_width or r <= ph.hub_radius:
        return ph.base_thickness
    theta = math.atan2(y, x)
    for k in range(ph.spoke_count):
        centre = ph.spoke_phase + 2 * math.pi * k / ph.spoke_count
        d = (theta - centre + math.pi) % (2 * math.pi) - math.pi
        if abs(d) <= ph.spoke_half_width:
            return ph.base_thickness
    return 0.0


def test_thickness_outside_wheel_is_zero():
    assert thickness_at(wheel(), 61.0, 0.0) == 0.0


def test_thickness_on_spoke_centreline():
    ph = wheel(spoke_phase=0.3)
    r = (ph.hub_radius + ph.outer_radius - ph.rim_width) / 2
    assert thickness_at(ph, r * math.cos(0.3), r * math.sin(0.3)) == 20.0


def test_thickness_between_spokes():
    # 4 spokes at 0, 90, 180, 270 degrees; 45 degrees is 0.785 rad from the nearest > 0.2
    ph = wheel()
    r = (ph.hub_radius + ph.outer_radius - ph.rim_width) / 2
    assert thickness_at(ph, r * math.cos(math.pi / 4), r * math.sin(math.pi / 4)) == 0.0


def test_thickness_matches_longhand_reference():
    rng = np.random.default_rng(1)
    ph = wheel(spoke_count=5, spoke_phase=1.1, spoke_half_width=0.3)
    pts = rng.uniform(-70, 70, size=(2000, 2))
    got = thickness_at(ph, pts[:, 0], pts[:, 1])
    want = [reference_thickness(ph, x, y) for x, y in pts]
    np.testing.assert_array_equal(got, want)


def test_slab_optical_depth():
    od = attenuation_line_integral(wheel(), [], 55.0, 0.0)
    assert od == pytest.approx(1.0, abs=1e-12)
    assert math.exp(-od) == pytest.approx(0.3678794412, abs=1e-10)


def test_void_at_centre_reduces_depth():
    void = Defect((55.0, 0.0, 0.0), (2, 2, 2), 0.5)
    assert attenuation_line_integral(wheel(), [void], 55.0, 0.0) == pytest.approx(0.9, abs=1e-12)
    assert math.exp(-0.9) > math.exp(-1.0)


def test_depth_clamped_at_zero():
    void = Defect((0.0, 0.0, 0.0), (5, 5, 200), 0.99)
    assert attenuation_line_integral(wheel(), [void], 0.0, 0.0) == 0.0


def test_constructor_invariants():
    with pytest.raises(ValueError):
        wheel(hub_radius=70)
    with pytest.raises(ValueError):
        wheel(spoke_count=2)
    with pytest.raises(ValueError):
        Defect((0, 0, 0), (1, 0, 1), 0.1)
    with pytest.raises(ValueError):
        Defect((0, 0, 0), (1, 1, 1), 1.0)
    with pytest.raises(ValueError):
        RenderProfile(flux_i0=0)
    with pytest.raises(ValueError):
        ProjectionGeometry(0, 10)


def test_empty_scene_is_flat():
    # pixel centres at +-50 and +-150 mm, all outside a 10 mm wheel
    ph = wheel(outer_radius=10, hub_radius=2, rim_width=2)
    geo = ProjectionGeometry(4, 4, pixel_pitch=100.0)
    prof = RenderProfile(flux_i0=30000, gain=1.5, offset=120, fog=400)
    img, boxes = render(ph, [], geo, prof, seed=3)
    assert boxes == []
    assert np.all(img.values == round(1.5 * (30000 + 400) + 120))


def test_box_for_centred_defect():
    geo = ProjectionGeometry(100, 100, 1.0)
    d = Defect((0.0, 0.0, 0.0), (4, 2, 1), 0.5)
    _, boxes = render(wheel(), [d], geo, CLEAN, seed=0)
    assert boxes == [(46, 48, 54, 52)]


def test_box_clipped_and_dropped():
    geo = ProjectionGeometry(100, 100, 1.0)
    edge = Defect((-49.0, 0.0, 0.0), (4, 2, 1), 0.5)
    gone = Defect((-80.0, 0.0, 0.0), (4, 2, 1), 0.5)
    _, boxes = render(wheel(), [edge, gone], geo, CLEAN, seed=0)
    assert boxes == [(0, 48, 5, 52)]


def test_render_rejects_empty_geometry():
    with pytest.raises(ValueError):
        render(wheel(), [], ProjectionGeometry(0, 5), CLEAN, 0)


def test_beer_lambert_on_random_rays():
    rng = np.random.default_rng(7)
    ph = wheel(spoke_count=6, spoke_half_width=0.25, mu=0.04, base_thickness=25)
    defects = [Defect((rng.uniform(-40, 40), rng.uniform(-40, 40), 0), rng.uniform(2, 8, 3), rng.uniform(0, 0.9))
               for _ in range(6)]
    pts = rng.uniform(-65, 65, size=(1000, 2))
    od = attenuation_line_integral(ph, defects, pts[:, 0], pts[:, 1])
    # independent oracle: longhand thickness and chord per ray
    for (x, y), got in zip(pts, od):
        depth = ph.mu * reference_thickness(ph, x, y)
        for d in defects:
            (cx, cy, _), (a, b, c) = d.center, d.semi_axes
            q = 1 - ((x - cx) / a) ** 2 - ((y - cy) / b) ** 2
            depth -= ph.mu * d.density_drop * (2 * c * math.sqrt(q) if q > 0 else 0.0)
        assert got == pytest.approx(max(depth, 0.0), rel=1e-12, abs=1e-15)
    inten = pre_noise_intensity(od, CLEAN)
    np.testing.assert_allclose(inten, 60000.0 * np.exp(-od), rtol=1e-9)


def _random_scene(rng):
    ph = wheel(spoke_count=int(rng.integers(3, 8)), spoke_phase=rng.uniform(0, 6),
               base_thickness=rng.uniform(5, 30), mu=rng.uniform(0.01, 0.1))
    defects = [Defect((rng.uniform(-50, 50), rng.uniform(-50, 50), 0), rng.uniform(2, 10, 3), rng.uniform(0, 0.9))
               for _ in range(int(rng.integers(0, 4)))]
    return ph, defects


def test_thickness_monotonicity():
    rng = np.random.default_rng(11)
    geo = ProjectionGeometry(32, 32, 4.0)
    prof = RenderProfile(flux_i0=50000, blur_sigma=1.3, gain=0.9, offset=50, fog=100)
    for _ in range(200):
        ph, defects = _random_scene(rng)
        thicker = WheelPhantom(**{**ph.__dict__, "base_thickness": ph.base_thickness * rng.uniform(1.0, 2.0)})
        a = pre_noise_intensity(optical_depth_map(ph, defects, geo), prof)
        b = pre_noise_intensity(optical_depth_map(thicker, defects, geo), prof)
        assert np.all(b <= a + 1e-9 * a)


def test_void_density_monotonicity():
    rng = np.random.default_rng(12)
    geo = ProjectionGeometry(32, 32, 4.0)
    prof = RenderProfile(flux_i0=50000, blur_sigma=0.8)
    for _ in range(200):
        ph, defects = _random_scene(rng)
        d = Defect((rng.uniform(-50, 50), rng.uniform(-50, 50), 0), rng.uniform(4, 12, 3), rng.uniform(0, 0.5))
        stronger = Defect(d.center, d.semi_axes, d.density_drop + rng.uniform(0, 0.49))
        a = pre_noise_intensity(optical_depth_map(ph, defects + [d], geo), prof)
        b = pre_noise_intensity(optical_depth_map(ph, defects + [stronger], geo), prof)
        x, y = geo.pixel_centers()
        under = d.chord(x, y) > 0
        assert np.all(b[under] >= a[under] * (1 - 1e-12))


@settings(max_examples=200, deadline=None)
@given(cx=st.floats(-60, 60), cy=st.floats(-60, 60), a=st.floats(0.6, 20), b=st.floats(0.6, 20),
       pitch=st.sampled_from([0.5, 1.0, 1.7]))
def test_box_tightness(cx, cy, a, b, pitch):
    # defects narrower than two pixels slip between sample points
    a, b = max(a, 2 * pitch), max(b, 2 * pitch)
    geo = ProjectionGeometry(64, 48, pitch)
    d = Defect((cx, cy, 0.0), (a, b, 3.0), 0.5)
    _, boxes = render(wheel(), [d], geo, CLEAN, seed=0)
    x, y = geo.pixel_centers()
    inside = d.chord(x, y) > 0
    if not boxes:
        assert not inside.any()
        return
    (x0, y0, x1, y1), = boxes
    rows, cols = np.nonzero(inside)
    assert rows.size == 0 or (rows.min() >= y0 and rows.max() < y1 and cols.min() >= x0 and cols.max() < x1)
    unclipped = x0 > 0 and y0 > 0 and x1 < geo.width and y1 < geo.height
    if rows.size and unclipped:
        # every box edge lies within one pixel of a covered pixel
        assert rows.min() - y0 <= 1 and y1 - 1 - rows.max() <= 1
        assert cols.min() - x0 <= 1 and x1 - 1 - cols.max() <= 1


def test_render_deterministic():
    ph = wheel()
    geo = ProjectionGeometry(48, 48, 2.5)
    d = [Defect((10, 5, 0), (5, 4, 3), 0.6)]
    prof = RenderProfile(flux_i0=60000, noise_sigma=900, blur_sigma=1.2, gain=0.8, offset=10, fog=50, jitter_sigma=0.4)
    a = render(ph, d, geo, prof, seed=2**63 + 5)
    b = render(ph, d, geo, prof, seed=2**63 + 5)
    assert a[0].to_pgm() == b[0].to_pgm()
    assert a[1] == b[1]
    c = render(ph, d, geo, prof, seed=6)
    assert c[0] != a[0]


def test_quantization_clamps():
    ph = wheel()
    geo = ProjectionGeometry(8, 8, 20.0)
    img, _ = render(ph, [], geo, RenderProfile(flux_i0=60000, gain=3.0), 0)
    assert img.values.max() == 65535
    img, _ = render(ph, [], geo, RenderProfile(flux_i0=10, offset=-1000), 0)
    assert img.values.min() == 0


def test_blur_preserves_constant_and_mass():
    flat = np.full((9, 7), 3.0)
    np.testing.assert_allclose(gaussian_blur(flat, 1.5), flat, rtol=1e-14)
    spike = np.zeros((21, 21))
    spike[10, 10] = 1.0
    out = gaussian_blur(spike, 1.0)
    assert out.sum() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(out, out.T, atol=1e-15)


def test_pgm_bytes():
    img = GreyImage(3, 2, np.array([[0, 1, 256], [65535, 2, 3]], dtype=np.uint16))
    data = img.to_pgm()
    assert data.startswith(b"P5\n3 2\n65535\n")
    assert data[len(b"P5\n3 2\n65535\n"):] == bytes([0, 0, 0, 1, 1, 0, 255, 255, 0, 2, 0, 3])
    assert GreyImage.from_pgm(data) == img


def test_pgm_rejects_other_formats():
    with pytest.raises(ValueError):
        GreyImage.from_pgm(b"P2\n1 1\n65535\n0\n")
    with pytest.raises(ValueError):
        GreyImage.from_pgm(b"P5\n1 1\n255\n\x00")
