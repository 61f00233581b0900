import numpy as np
import pytest

from refractrace.heightfield import init_flat
from refractrace.surface import (MeshError, ProxyMesh, build_bvh, build_proxy, dense_trace, face_normals,
                                 grid_faces, interpolate_normal, intersect_mesh, intersect_mesh_brute,
                                 intersect_triangle, load_obj, parent_face, recursive_subdivision_trace,
                                 save_obj, surface_backward, trace_mesh, validate_heightfield_mesh,
                                 vertex_normals)
from refractrace.surface.bvh import count_candidates
from refractrace.surface.mesh import child_faces, grid_xy

DOMAIN = (-1.0, 1.0, -1.0, 1.0)


class Sine:
    """Analytic height field standing in for a network."""

    domain = DOMAIN

    def __init__(self, amp=0.1, k=(2.0, 1.3), z0=0.0):
        self.amp, self.k, self.z0 = amp, k, z0

    def __call__(self, xy):
        return self.z0 + self.amp * np.sin(self.k[0] * xy[:, 0]) * np.cos(self.k[1] * xy[:, 1])

    def normal(self, xy):
        gx = self.amp * self.k[0] * np.cos(self.k[0] * xy[:, 0]) * np.cos(self.k[1] * xy[:, 1])
        gy = -self.amp * self.k[1] * np.sin(self.k[0] * xy[:, 0]) * np.sin(self.k[1] * xy[:, 1])
        n = np.column_stack([-gx, -gy, np.ones(len(xy))])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


class Plane(Sine):
    def __init__(self, z0):
        super().__init__(0.0, (0.0, 0.0), z0)


def downward_rays(rng, n, spread=0.6, height=1.0, tilt=0.2):
    o = np.column_stack([rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n), np.full(n, height)])
    d = np.column_stack([rng.uniform(-tilt, tilt, n), rng.uniform(-tilt, tilt, n), -np.ones(n)])
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


def test_build_proxy_counts_and_heights():
    flat = build_proxy(init_flat(DOMAIN, 0.25, 1.0, 0, 8, 2), 2, 2)
    assert len(flat.vertices) == 4 and flat.n_faces == 2
    assert np.all(flat.vertices[:, 2] == 0.25)
    mesh = build_proxy(Sine(), 3, 3)
    assert len(mesh.vertices) == 9 and mesh.n_faces == 8
    big = build_proxy(Sine(), 31, 17)
    assert big.n_faces == 2 * 30 * 16
    np.testing.assert_allclose(big.vertices[:, 2], Sine()(big.vertices[:, :2]), atol=1e-12)
    with pytest.raises(ValueError):
        build_proxy(Sine(), 1, 5)


def test_grid_faces_are_counter_clockwise():
    mesh = build_proxy(Plane(0.0), 5, 4)
    n = face_normals(mesh.vertices, mesh.faces)
    np.testing.assert_allclose(n, np.tile([0.0, 0.0, 1.0], (mesh.n_faces, 1)))


def test_subdivision_indexing_matches_finer_grid():
    nx, ny = 5, 4
    fine = build_proxy(Sine(), 2 * nx - 1, 2 * ny - 1)
    coarse = build_proxy(Sine(), nx, ny)
    for f in range(coarse.n_faces):
        kids = child_faces(np.array([f]), nx)[0]
        assert np.all(parent_face(kids, 2 * nx - 1) == f)
        # children tile the parent: their projected areas sum to the parent's
        def area(m, faces):
            v = m.vertices[m.faces[faces]][:, :, :2]
            e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
            return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        np.testing.assert_allclose(area(fine, kids).sum(), area(coarse, [f])[0])


def test_intersect_triangle_basic():
    v0, v1, v2 = np.array([-1.0, -1, 0]), np.array([2.0, -1, 0]), np.array([-1.0, 2, 0])
    t, a, b, c = intersect_triangle([0, 0, 1], [0, 0, -1], v0, v1, v2)
    assert t == pytest.approx(1.0)
    assert a + b + c == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(a * v0 + b * v1 + c * v2, [0, 0, 0], atol=1e-15)
    assert intersect_triangle([0, 0, 1], [1, 0, 0], v0, v1, v2) is None
    assert intersect_triangle([0, 0, 1], [0, 0, 1], v0, v1, v2) is None


def test_intersect_triangle_against_plane_oracle():
    rng = np.random.default_rng(0)
    agree = 0
    for _ in range(1000):
        v = rng.normal(size=(3, 3))
        o = rng.normal(size=3) * 2
        target = rng.dirichlet([1, 1, 1]) @ v + rng.normal(size=3) * 0.3
        d = target - o
        d /= np.linalg.norm(d)
        got = intersect_triangle(o, d, *v)
        n = np.cross(v[1] - v[0], v[2] - v[0])
        denom = n @ d
        expect = None
        if abs(denom) > 1e-12:
            t = n @ (v[0] - o) / denom
            p = o + t * d
            # inside test via same-side signs of the sub-triangle areas
            s = [np.cross(v[(k + 1) % 3] - v[k], p - v[k]) @ n for k in range(3)]
            if t > 1e-9 and (min(s) >= 0 or max(s) <= 0):
                expect = t
        if expect is None:
            assert got is None
        else:
            assert got is not None and abs(got[0] - expect) < 1e-9 * max(1, expect)
            w = np.array(got[1:])
            np.testing.assert_allclose(w @ v, o + got[0] * d, atol=1e-9)
        agree += 1
    assert agree == 1000


def test_bvh_matches_brute_force():
    rng = np.random.default_rng(1)
    mesh = build_proxy(Sine(0.3, (5.0, 4.0)), 20, 20)
    bvh = build_bvh(mesh)
    o, d = downward_rays(rng, 1000, spread=1.2, tilt=0.8)
    t1, f1, w1 = intersect_mesh(mesh, bvh, o, d)
    t2, f2, w2 = intersect_mesh_brute(mesh, o, d)
    assert np.array_equal(f1, f2)
    np.testing.assert_array_equal(t1, t2)
    assert (f1 >= 0).sum() > 500 and (f1 < 0).sum() > 0


def test_bvh_structure():
    mesh = build_proxy(Sine(), 2, 2)
    bvh = build_bvh(mesh, leaf_size=1)
    assert bvh.n_nodes == 3 and sorted(bvh.perm.tolist()) == [0, 1]
    bvh = build_bvh(build_proxy(Sine(), 12, 9))
    leaves = np.flatnonzero(bvh.left < 0)
    prims = np.concatenate([bvh.perm[bvh.start[k]:bvh.start[k] + bvh.count[k]] for k in leaves])
    assert sorted(prims.tolist()) == list(range(2 * 11 * 8))
    # a ray far from the mesh visits nothing
    assert count_candidates(bvh, [[5.0, 5.0, 5.0]], [[0.0, 0.0, 1.0]])[0] == 0


def test_barycentric_validity():
    rng = np.random.default_rng(2)
    mesh = build_proxy(Sine(), 15, 15)
    o, d = downward_rays(rng, 500)
    hits = trace_mesh(mesh, build_bvh(mesh), o, d)
    w = hits.bary[hits.hit]
    assert hits.hit.all()
    assert w.min() >= -1e-9 and w.max() <= 1 + 1e-9
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    p = np.einsum("rk,rki->ri", w, mesh.vertices[mesh.faces[hits.face[hits.hit]]])
    np.testing.assert_allclose(p, hits.point[hits.hit], atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(hits.normal, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("levels", [0, 1, 2, 3])
def test_recursive_trace_on_plane_is_exact(levels):
    rng = np.random.default_rng(3)
    o, d = downward_rays(rng, 400)
    res = recursive_subdivision_trace(Plane(0.37), o, d, 9, 9, levels)
    t_true = (0.37 - o[:, 2]) / d[:, 2]
    assert res.hits.hit.all()
    np.testing.assert_allclose(res.hits.t, t_true, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.hits.normal, np.tile([0, 0, 1.0], (400, 1)), atol=1e-12)


def test_zero_levels_equals_coarse_bvh():
    rng = np.random.default_rng(4)
    o, d = downward_rays(rng, 300)
    net = Sine(0.2, (4.0, 3.0))
    res = recursive_subdivision_trace(net, o, d, 12, 12, 0)
    dense = dense_trace(net, o, d, 12, 12)
    assert np.array_equal(res.mesh.face_ids[res.hits.face], dense.hits.face)
    np.testing.assert_array_equal(res.hits.t, dense.hits.t)
    np.testing.assert_allclose(res.hits.normal, dense.hits.normal, atol=1e-12)


def test_recursive_trace_agrees_with_dense_lattice():
    rng = np.random.default_rng(5)
    o, d = downward_rays(rng, 2000)
    net = Sine(0.1, (3.0, 2.0))
    res = recursive_subdivision_trace(net, o, d, 13, 13, 2)
    dense = dense_trace(net, o, d, 49, 49)
    same = res.mesh.face_ids[res.hits.face] == dense.hits.face
    assert 1 - same.mean() < 0.01
    np.testing.assert_allclose(res.hits.t[same], dense.hits.t[same], atol=1e-12)
    np.testing.assert_allclose(res.hits.normal[same], dense.hits.normal[same], atol=1e-12)
    assert res.queries < 49 * 49


def test_face_mode_normals():
    rng = np.random.default_rng(6)
    o, d = downward_rays(rng, 100)
    res = recursive_subdivision_trace(Sine(), o, d, 9, 9, 1, normal_mode="face")
    m = res.mesh
    np.testing.assert_allclose(res.hits.normal, face_normals(m.vertices, m.faces[res.hits.face]), atol=1e-15)
    with pytest.raises(ValueError):
        recursive_subdivision_trace(Sine(), o, d, 9, 9, 1, normal_mode="smooth")


def test_vertex_normals_simple_cases():
    flat = build_proxy(Plane(1.0), 6, 6)
    np.testing.assert_allclose(flat.vertex_normals, np.tile([0, 0, 1.0], (36, 1)), atol=1e-15)
    tri = vertex_normals(ProxyMesh(np.array([[0, 0, 0], [1, 0, 0.5], [0, 1, 0.2]]), np.array([[0, 1, 2]])))
    fn = face_normals(tri.vertices, tri.faces)[0]
    np.testing.assert_allclose(tri.vertex_normals, np.tile(fn, (3, 1)), atol=1e-15)


def test_vertex_normals_converge_to_analytic():
    s = Sine(0.2, (3.0, 2.0))
    errs = []
    for n in (11, 21, 41, 81):
        mesh = build_proxy(s, n, n)
        inner = np.all(np.abs(mesh.vertices[:, :2]) < 0.9, axis=1)
        err = np.arccos(np.clip(np.einsum("ij,ij->i", mesh.vertex_normals[inner],
                                          s.normal(mesh.vertices[inner, :2])), -1, 1)).max()
        errs.append(err)
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    print("vertex-normal error per refinement:", errs, "ratios", ratios)
    assert np.all(ratios > 1.8)
    assert np.all(mesh.vertex_normals[:, 2] > 0)


def test_phong_normals_continuous_across_edges():
    mesh = build_proxy(Sine(0.3, (4.0, 3.0)), 10, 10)
    nx = 10
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        i, j = rng.integers(0, nx - 1, size=2)
        s = rng.random()
        lower, upper = 2 * (j * (nx - 1) + i), 2 * (j * (nx - 1) + i) + 1
        # shared diagonal a-c: lower face (a, b, c), upper face (a, c, d)
        n1 = interpolate_normal(mesh, lower, np.array([1 - s, 0.0, s]))
        n2 = interpolate_normal(mesh, upper, np.array([1 - s, s, 0.0]))
        worst = max(worst, np.abs(n1 - n2).max())
        if i + 1 < nx - 1:
            # vertical edge b-c shared with the next cell's upper face (a', c', d') = (b, ., c)
            nb = lower + 2
            n3 = interpolate_normal(mesh, lower, np.array([0.0, 1 - s, s]))
            n4 = interpolate_normal(mesh, nb + 1, np.array([1 - s, 0.0, s]))
            worst = max(worst, np.abs(n3 - n4).max())
    assert worst < 1e-12
    f = 17
    np.testing.assert_allclose(interpolate_normal(mesh, f, np.array([1.0, 0, 0])),
                               mesh.vertex_normals[mesh.faces[f, 0]], atol=1e-15)


def test_validate_and_obj_round_trip(tmp_path):
    mesh = build_proxy(Sine(), 6, 5)
    path = tmp_path / "m.obj"
    save_obj(path, mesh)
    back = validate_heightfield_mesh(load_obj(path))
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_allclose(back.vertex_normals, mesh.vertex_normals, atol=1e-15)
    # clockwise winding throughout is repaired
    flipped = validate_heightfield_mesh(ProxyMesh(mesh.vertices, mesh.faces[:, [0, 2, 1]]))
    assert np.all(face_normals(flipped.vertices, flipped.faces)[:, 2] > 0)


def test_validate_rejects_non_heightfields():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(MeshError, match="vertical"):
        validate_heightfield_mesh(ProxyMesh(v, np.array([[0, 1, 2], [0, 1, 3]])))
    # two stacked copies of the same sheet
    mesh = build_proxy(Sine(), 4, 4)
    v2 = np.vstack([mesh.vertices, mesh.vertices + [0, 0, 1.0]])
    f2 = np.vstack([mesh.faces, mesh.faces + len(mesh.vertices)])
    with pytest.raises(MeshError, match="overlaps"):
        validate_heightfield_mesh(ProxyMesh(v2, f2))
    with pytest.raises(MeshError, match="folds"):
        validate_heightfield_mesh(ProxyMesh(mesh.vertices, np.vstack([mesh.faces[:3], mesh.faces[3:, [0, 2, 1]]])))
    with pytest.raises(MeshError):
        ProxyMesh(v, np.array([[0, 1, 7]]))


def test_load_obj_errors(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nf 1 2\n")
    with pytest.raises(MeshError, match="fewer than 3"):
        load_obj(p)
    p.write_text("v 0 0 0\n")
    with pytest.raises(MeshError, match="no faces"):
        load_obj(p)


# ---------------------------------------------------------------- backward

def test_backward_zero_upstream():
    rng = np.random.default_rng(8)
    mesh = build_proxy(Sine(), 8, 8)
    o, d = downward_rays(rng, 50)
    hits = trace_mesh(mesh, build_bvh(mesh), o, d)
    g = surface_backward(hits, mesh, np.zeros((50, 3)), np.zeros((50, 3)))
    assert g.shape == (64,) and not g.any()


def test_backward_plane_height_oracle():
    # raising a flat plane by dh moves the hit by dh / d_z along the ray
    rng = np.random.default_rng(9)
    mesh = build_proxy(Plane(0.2), 7, 7)
    o, d = downward_rays(rng, 40)
    hits = trace_mesh(mesh, build_bvh(mesh), o, d)
    g = surface_backward(hits, mesh, d, np.zeros((40, 3)))
    # dL/dp = d, so dL/dh = d . dp/dh = d . d / d_z summed over rays
    np.testing.assert_allclose(g.sum(), np.sum(1.0 / d[:, 2]), rtol=1e-12)
    # horizontal upstream only: d_h . d_h / d_z
    gh = d * [1, 1, 0]
    g = surface_backward(hits, mesh, gh, np.zeros((40, 3)))
    np.testing.assert_allclose(g.sum(), np.sum((d[:, 0] ** 2 + d[:, 1] ** 2) / d[:, 2]), rtol=1e-12)


@pytest.mark.parametrize("mode", ["phong", "face"])
def test_backward_matches_finite_differences(mode):
    rng = np.random.default_rng(10)
    nx = 7
    xy = grid_xy(DOMAIN, nx, nx)
    z = 0.15 * rng.normal(size=len(xy))
    faces = grid_faces(nx, nx)
    o, d = downward_rays(rng, 60, spread=0.7, tilt=0.3)
    gp = rng.normal(size=(60, 3))
    gN = rng.normal(size=(60, 3))

    def run(zz):
        m = vertex_normals(ProxyMesh(np.column_stack([xy, zz]), faces))
        return m, trace_mesh(m, build_bvh(m), o, d, mode)

    mesh, hits = run(z)
    g = surface_backward(hits, mesh, gp, gN, mode)

    def loss(zz):
        _, h = run(zz)
        assert np.array_equal(h.face, hits.face)
        return np.sum(gp * h.point) + np.sum(gN * h.normal)

    eps = 1e-6
    num = np.zeros_like(z)
    for k in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[k] += eps
        zm[k] -= eps
        num[k] = (loss(zp) - loss(zm)) / (2 * eps)
    assert np.linalg.norm(num - g) / np.linalg.norm(num) < 1e-4
