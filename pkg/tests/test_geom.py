import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refractrace.geom import (Camera, RefractionConfig, TotalInternalReflection, image_rays, normalize,
                              pixel_ray, project, refract, refract_backward, refract_batch)

UP = np.array([0.0, 0.0, 1.0])


def random_units(rng, n):
    return normalize(rng.normal(size=(n, 3)))


def incident_pairs(rng, n):
    # incident directions heading into the surface (I.N < 0)
    normals = random_units(rng, n)
    inc = random_units(rng, n)
    flip = np.einsum("ij,ij->i", inc, normals) > 0
    inc[flip] *= -1
    return inc, normals


def test_normal_incidence_passes_straight():
    t = refract(np.array([0.0, 0.0, -1.0]), UP, 1 / 1.333)
    np.testing.assert_allclose(t, [0.0, 0.0, -1.0], atol=1e-15)


def test_45_degrees_air_to_water():
    s = np.sqrt(0.5)
    t = refract(np.array([s, 0.0, -s]), UP, 1 / 1.333)
    theta2 = np.degrees(np.arccos(-t[2]))
    assert abs(theta2 - np.degrees(np.arcsin(np.sin(np.pi / 4) / 1.333))) < 1e-12
    assert abs(theta2 - 32.04) < 0.01
    assert t[1] == 0.0


def test_total_internal_reflection():
    # water to air beyond the critical angle (about 48.6 degrees)
    th = np.radians(60)
    inc = np.array([np.sin(th), 0.0, np.cos(th)])  # travelling up, normal faces up -> flipped
    with pytest.raises(TotalInternalReflection):
        refract(inc, UP, 1 / 1.333)
    t, ok = refract_batch(inc[None], UP[None], 1 / 1.333)
    assert not ok[0] and np.all(t[0] == 0)


def test_reversed_normal_means_reversed_media():
    rng = np.random.default_rng(1)
    inc, n = incident_pairs(rng, 200)
    a, ok_a = refract_batch(inc, n, 0.75)
    b, ok_b = refract_batch(inc, -n, 1 / 0.75)
    assert np.array_equal(ok_a, ok_b)
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_snell_conservation_and_coplanarity():
    rng = np.random.default_rng(2)
    inc, n = incident_pairs(rng, 1000)
    eta = 1 / 1.333
    t, ok = refract_batch(inc, n, eta)
    assert ok.all()
    sin1 = np.linalg.norm(np.cross(inc, n), axis=1)
    sin2 = np.linalg.norm(np.cross(t, n), axis=1)
    np.testing.assert_allclose(eta * sin1, sin2, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0, atol=1e-14)
    # T lies in the plane of I and N
    np.testing.assert_allclose(np.einsum("ij,ij->i", t, np.cross(inc, n)), 0.0, atol=1e-12)
    # and keeps going through the surface
    assert np.all(np.einsum("ij,ij->i", t, n) < 0)


def test_reciprocity():
    rng = np.random.default_rng(3)
    inc, n = incident_pairs(rng, 1000)
    t = refract(inc, n, 1 / 1.333)
    back = refract(-t, n, 1 / 1.333)  # normal now along the ray: flipped, eta inverted
    np.testing.assert_allclose(back, -inc, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 89.0), st.floats(0.0, 360.0), st.floats(0.3, 3.0))
def test_snell_angles_any_eta(theta_deg, phi_deg, eta):
    th, ph = np.radians(theta_deg), np.radians(phi_deg)
    inc = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), -np.cos(th)])
    t, ok = refract_batch(inc[None], UP[None], eta)
    if eta * np.sin(th) > 1 + 1e-12:
        assert not ok[0]
        return
    if eta * np.sin(th) > 1 - 1e-12:
        return
    assert ok[0]
    sin2 = np.hypot(t[0, 0], t[0, 1])
    assert abs(sin2 - eta * np.sin(th)) < 1e-12


def fd_check(fun, x, g_analytic, h=1e-6):
    num = np.zeros_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += h
        xm.flat[k] -= h
        num.flat[k] = (fun(xp) - fun(xm)) / (2 * h)
    return np.linalg.norm(num - g_analytic) / max(np.linalg.norm(num), 1e-30)


def test_refract_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        inc, n = incident_pairs(rng, 1)
        inc, n = inc[0], n[0]
        eta = 0.75
        if rng.random() < 0.5:
            n, eta = -n, 1 / eta  # exercise the flipped branch too
        g = rng.normal(size=3)
        gi, gn = refract_backward(inc, n, eta, g)
        worst = max(worst,
                    fd_check(lambda x: g @ refract(x, n, eta), inc, gi),
                    fd_check(lambda x: g @ refract(inc, x, eta), n, gn))
    assert worst < 1e-6


def test_refract_backward_zero_for_tir():
    th = np.radians(70)
    inc = np.array([[np.sin(th), 0.0, np.cos(th)]])
    gi, gn = refract_backward(inc, UP[None], 1 / 1.333, np.ones((1, 3)))
    assert np.all(gi == 0) and np.all(gn == 0)


def test_refraction_config():
    assert RefractionConfig(1.0, 1.333).eta == pytest.approx(1 / 1.333)
    with pytest.raises(ValueError):
        RefractionConfig(0.0, 1.0)


def make_camera(w=32, h=24):
    return Camera.look_at([3.0, -2.0, 4.0], [0.1, 0.2, 1.0], UP, 40.0, w, h)


def test_pixel_ray_project_round_trip():
    cam = make_camera()
    rng = np.random.default_rng(5)
    px, py = rng.uniform(0, cam.width, 50), rng.uniform(0, cam.height, 50)
    o, d = pixel_ray(cam, px, py)
    pts = o + rng.uniform(0.5, 10, 50)[:, None] * d
    np.testing.assert_allclose(project(cam, pts), np.column_stack([px, py]), atol=1e-9)


def test_camera_conventions():
    cam = make_camera()
    np.testing.assert_allclose(cam.center, [3.0, -2.0, 4.0], atol=1e-12)
    o, d = image_rays(cam)
    assert o.shape == (cam.width * cam.height, 3)
    # centre of the image looks at the target
    mid = pixel_ray(cam, cam.width / 2 - 0.5, cam.height / 2 - 0.5)[1]
    np.testing.assert_allclose(mid, normalize(np.array([0.1, 0.2, 1.0]) - [3.0, -2.0, 4.0]), atol=1e-12)
    # row-major order, y grows downward in the image (towards lower world z here)
    assert d[0, 2] > d[-1, 2]
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-14)


def test_camera_dict_round_trip_and_validation():
    cam = make_camera()
    back = Camera.from_dict(cam.to_dict())
    np.testing.assert_array_equal(back.rotation, cam.rotation)
    assert (back.width, back.height) == (cam.width, cam.height)
    with pytest.raises(ValueError, match="orthonormal"):
        Camera(10, 10, 5, 5, np.diag([1.0, 1.0, 2.0]), np.zeros(3), 10, 10)
    with pytest.raises(ValueError):
        Camera.look_at([0, 0, 5], [0, 0, 0], UP, 40, 8, 8)
