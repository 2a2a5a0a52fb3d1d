
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iblkit.brdf import GAMMA_MIN, MicrofacetParams
from iblkit.camera import Camera, focal_from_fov, look_at
from iblkit.field import (AnalyticField, Blob, query_prefiltered, reflect, sdf_box, sdf_room, sdf_slab,
                          sdf_sphere)
from iblkit.lut import default_lut, fetch
from iblkit.mc import mc_specular
from iblkit.prefilter import PrefilterSpec, interp_weights
from iblkit.shade import (
    EditSpec,
    EmptySelectionWarning,
    InsertedObject,
    IntrinsicBuffers,
    Region,
    RenderSettings,
    apply_edits,
    insert_object,
    render_view,
    render_view_mc,
    shade_backward,
    shade_forward,
    shade_pixel,
    sphere_trace,
)

LUT = default_lut()
SPEC = PrefilterSpec(d0=1.5)
# LUT golden cell (cos = 0.5, gamma = 0.5), see test_lut
GOLDEN_CELL = (0.871508, 0.025317)


def _buffers(p=1, **kw):
    base = dict(
        albedo=np.full((p, 3), 0.5), irradiance=np.ones(p), roughness=np.full(p, 0.5),
        normal=np.tile([0.0, 0.0, 1.0], (p, 1)), depth=np.ones(p), t_far=np.zeros(p),
        pref=np.full((p, 4, 3), 0.5), d_reflect=np.full(p, SPEC.d0), escaped=np.zeros(p, bool),
        omega_o=np.tile([0.0, 0.0, 1.0], (p, 1)), hit=np.ones(p, bool), position=np.zeros((p, 3)),
    )
    for k, v in kw.items():
        base[k] = np.broadcast_to(np.asarray(v, dtype=base[k].dtype), base[k].shape).copy()
    return IntrinsicBuffers(**base)


def _view(cos_o):
    return [np.sqrt(1 - cos_o**2), 0.0, cos_o]


def test_no_light_is_black():
    b = _buffers(irradiance=0.0, pref=np.zeros((1, 4, 3)))
    rgb, _, _ = shade_pixel(b, LUT, SPEC)
    assert np.all(rgb == 0)


def test_specular_only_from_golden_cell():
    c = np.array([0.2, 0.5, 0.9])
    b = _buffers(albedo=0.0, roughness=0.5, omega_o=_view(0.5), pref=np.tile(c, (1, 4, 1)))
    rgb, diffuse, specular = shade_pixel(b, LUT, SPEC)
    assert np.all(diffuse == 0)
    # m = 1 - gamma = 0.5, so F0 = 0.04 * 0.5 for a black albedo
    expected = c * (0.02 * GOLDEN_CELL[0] + GOLDEN_CELL[1])
    np.testing.assert_allclose(rgb[0], expected, rtol=5e-3)


def test_specular_only_rough_dielectric():
    c = 0.7
    b = _buffers(albedo=0.0, roughness=1.0, omega_o=_view(0.8), pref=np.full((1, 4, 3), c))
    rgb, _, _ = shade_pixel(b, LUT, SPEC)
    s, bias = fetch(LUT, 0.8, 1.0)
    np.testing.assert_allclose(rgb[0], c * (0.04 * s + bias), rtol=1e-12)


def test_grid_roughness_uses_single_level():
    pref = np.zeros((1, 4, 3))
    pref[0, 2] = [1.0, 2.0, 3.0]
    b = _buffers(roughness=2 / 3, pref=pref, irradiance=0.0)
    _, _, spec_only = shade_pixel(b, LUT, SPEC)
    pref_other = pref.copy()
    pref_other[0, [0, 1, 3]] = 9.0
    _, _, spec_other = shade_pixel(_buffers(roughness=2 / 3, pref=pref_other, irradiance=0.0), LUT, SPEC)
    np.testing.assert_allclose(spec_only, spec_other, rtol=1e-12)


def test_depth_ratio_and_escape():
    pref = np.zeros((1, 4, 3))
    pref[0, 3] = 1.0
    # half the reference distance halves the level roughness: 2/3 -> 1/3
    near = _buffers(roughness=2 / 3, pref=pref, d_reflect=SPEC.d0 / 2, irradiance=0.0)
    assert shade_pixel(near, LUT, SPEC)[2].max() == 0.0
    far = _buffers(roughness=1 / 3, pref=pref, d_reflect=2 * SPEC.d0, irradiance=0.0)
    assert shade_pixel(far, LUT, SPEC)[2].max() == 0.0
    farther = _buffers(roughness=0.5, pref=pref, d_reflect=2 * SPEC.d0, irradiance=0.0)
    assert shade_pixel(farther, LUT, SPEC)[2].min() > 0.0
    # escaped reflections ignore the (meaningless) depth
    esc = _buffers(roughness=2 / 3, pref=pref, d_reflect=0.0, escaped=True, irradiance=0.0)
    assert shade_pixel(esc, LUT, SPEC)[2].max() == 0.0


def test_fixed_roughness_ignores_depth():
    fixed = PrefilterSpec(d0=SPEC.d0, depth_adaptive=False)
    pref = np.zeros((1, 4, 3))
    pref[0, 2] = 1.0
    outs = [shade_pixel(_buffers(roughness=2 / 3, pref=pref, d_reflect=d, irradiance=0.0), LUT, fixed)[2]
            for d in (0.1, SPEC.d0, 10.0)]
    assert outs[0].min() > 0.0
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[1], outs[2])


def test_background_pixels():
    b = _buffers(2, hit=[False, True], t_far=[0.8, 0.1])
    rgb, _, _ = shade_pixel(b, LUT, SPEC, background=0.5)
    np.testing.assert_allclose(rgb[0], 0.4)


def _random_inputs(rng, p=40):
    return dict(
        albedo=rng.uniform(0.02, 0.98, (p, 3)), irradiance=rng.uniform(0.0, 2.0, p),
        roughness=rng.uniform(0.03, 0.97, p), cos_o=rng.uniform(0.02, 1.0, p),
        pref=rng.uniform(0.0, 1.0, (p, 4, 3)), d_reflect=rng.uniform(0.2, 3.0, p),
        escaped=rng.random(p) < 0.2,
    )


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0))
def test_linear_in_prefiltered_radiance(seed, scale):
    x = _random_inputs(np.random.default_rng(seed))
    d1, s1, _ = shade_forward(**x, lut=LUT, spec=SPEC)
    x["pref"] = x["pref"] * scale
    d2, s2, _ = shade_forward(**x, lut=LUT, spec=SPEC)
    np.testing.assert_array_equal(d1, d2)
    np.testing.assert_allclose(s2, scale * s1, rtol=1e-12, atol=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_output_nonnegative(seed, mfr):
    x = _random_inputs(np.random.default_rng(seed))
    x["roughness"] = np.random.default_rng(seed + 1).uniform(0, 1, len(x["roughness"]))
    d, s, _ = shade_forward(**x, lut=LUT, spec=SPEC, metallic_from_roughness=mfr)
    assert np.all(d >= 0) and np.all(s >= 0)


@pytest.mark.parametrize("mfr", [True, False])
def test_shade_backward_matches_difference(rng, mfr):
    x = _random_inputs(rng, p=30)
    g = rng.normal(size=(30, 3))

    def loss(**kw):
        d, s, _ = shade_forward(**{**x, **kw}, lut=LUT, spec=SPEC, metallic_from_roughness=mfr)
        return np.sum(g * (d + s))

    _, _, aux = shade_forward(**x, lut=LUT, spec=SPEC, metallic_from_roughness=mfr)
    grads = shade_backward(aux, g)
    h = 1e-6
    for name in ("albedo", "irradiance", "roughness", "pref"):
        v = x[name]
        fd = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            fd[i] = (loss(**{name: vp}) - loss(**{name: vm})) / (2 * h)
        np.testing.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-7, err_msg=name)


def test_split_sum_matches_mc_under_constant_radiance():
    rng = np.random.default_rng(21)
    c = np.array([0.4, 0.8, 1.0])
    for i in range(10):
        cos_o, gamma = rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)
        albedo = rng.uniform(0.0, 1.0, 3)
        _, s, _ = shade_forward(albedo[None], np.zeros(1), np.array([gamma]), np.array([cos_o]),
                                np.tile(c, (1, 4, 1)), np.array([SPEC.d0]), np.zeros(1, bool), LUT, SPEC)
        # the shading F0 rule is metallic = 1 - gamma
        params = MicrofacetParams(albedo, gamma, 1.0 - gamma)
        ref = mc_specular(lambda x, w: np.broadcast_to(c, (len(w), 3)), np.zeros(3), _view(cos_o),
                          [0, 0, 1.0], params, 4096, seed=i)
        assert np.all(np.abs(s[0] - ref.value) <= 3 * ref.stderr), (cos_o, gamma)


# ---------------------------------------------------------------------------
# frame rendering on analytic fields

def _flat(c):
    return np.tile(np.asarray(c, dtype=float), (4, 1))


def _room_field():
    room = Blob(sdf_room(0.9), (0.6, 0.6, 0.6), 0.5, 0.8, _flat(0.3))
    ball = Blob(sdf_sphere([0, -0.5, -0.3], 0.3), (0.8, 0.1, 0.1), 0.2, 1.0, _flat([0.9, 0.2, 0.2]))
    return AnalyticField([room, ball])


def _camera(w=16, h=16, eye=(0.0, 0.0, 0.6), target=(0.0, -0.4, -0.3)):
    return Camera(look_at(eye, target), focal_from_fov(w, 60), w, h, near=0.05, far=3.0)


def test_zero_density_field_shows_background():
    st_ = RenderSettings(n_samples=16, n_reflect=8, background=0.25)
    frame, buffers, counter = render_view(AnalyticField([]), _camera(), LUT, SPEC, st_)
    np.testing.assert_allclose(frame["beauty"], 0.25, rtol=1e-12)
    assert not buffers.hit.any()
    assert counter.shading == 16 * 16 * 16


@pytest.mark.parametrize("seed", [None, 3])
def test_render_counter_and_determinism(seed):
    st_ = RenderSettings(n_samples=24, n_reflect=12, chunk=100)
    cam = _camera()
    f1, b1, c1 = render_view(_room_field(), cam, LUT, SPEC, st_, seed=seed)
    f2, _, _ = render_view(_room_field(), cam, LUT, SPEC, st_, seed=seed)
    assert c1.shading == cam.pixels * 24 + int(b1.hit.sum()) * 12
    assert c1.normal == int(b1.hit.sum()) * 24 * 6
    for k in f1:
        assert np.array_equal(f1[k], f2[k]), k


def test_render_partial_hits_counter():
    # a small plate in a wide view: rays past its edge never hit
    plate = Blob(sdf_box([0, 0, -0.8], [0.3, 0.3, 0.1]), (0.5, 0.5, 0.5), 0.5, 1.0, _flat(0.5))
    field = AnalyticField([plate])
    cam = Camera(look_at([0, 0, 0.5], [0, 0, -1]), focal_from_fov(16, 90), 16, 16, near=0.05, far=2.0)
    st_ = RenderSettings(n_samples=16, n_reflect=8)
    frame, b, counter = render_view(field, cam, LUT, SPEC, st_)
    hits = int(b.hit.sum())
    assert 0 < hits < cam.pixels
    assert counter.shading == cam.pixels * 16 + hits * 8


def test_render_aovs_on_sphere():
    cam = _camera(w=24, h=24, eye=(0, -0.5, 0.5), target=(0, -0.5, -0.3))
    frame, b, _ = render_view(_room_field(), cam, LUT, SPEC, RenderSettings(n_samples=96, normal_step=5e-3))
    center = frame["normal"][12, 12]
    expected = np.array([0.0, 0.0, 1.0])
    assert np.degrees(np.arccos(np.clip(center @ expected, -1, 1))) < 5
    np.testing.assert_allclose(frame["albedo"][12, 12], [0.8, 0.1, 0.1], atol=0.02)
    assert frame["depth"][12, 12] == pytest.approx(0.5, abs=0.02)
    assert np.all(frame["beauty"] >= 0)


def test_mc_path_counter():
    st_ = RenderSettings(n_samples=16, n_reflect=8)
    cam = _camera(w=8, h=8)
    img, counter = render_view_mc(_room_field(), cam, SPEC, st_, n_dirs=9)
    frame, b, _ = render_view(_room_field(), cam, LUT, SPEC, st_)
    assert b.hit.all()
    assert counter.shading == cam.pixels * (16 + 9 * 8)
    assert img.shape == (8, 8, 3) and np.all(img >= 0)


def test_mc_path_agrees_with_split_sum_in_uniform_room():
    # constant radiance everywhere: both shading routes reduce to closed forms
    field = AnalyticField([Blob(sdf_room(0.9), (0.5, 0.5, 0.5), 1.0, 0.6, _flat(0.6))])
    st_ = RenderSettings(n_samples=48, n_reflect=16)
    cam = _camera(w=6, h=6)
    img, _ = render_view_mc(field, cam, SPEC, st_, n_dirs=1024, seed=0)
    frame, _, _ = render_view(field, cam, LUT, SPEC, st_)
    np.testing.assert_allclose(img.mean(), frame["beauty"].mean(), rtol=0.05)


# ---------------------------------------------------------------------------
# edits

@pytest.fixture(scope="module")
def rendered():
    cam = _camera()
    frame, buffers, _ = render_view(_room_field(), cam, LUT, SPEC, RenderSettings(n_samples=32, n_reflect=16))
    return cam, frame, buffers


def test_empty_edit_is_identity(rendered):
    _, frame, buffers = rendered
    out, _ = apply_edits(buffers, EditSpec(), LUT, SPEC)
    assert np.array_equal(out.reshape(frame["beauty"].shape), frame["beauty"])


def test_albedo_override_leaves_specular(rendered):
    _, frame, buffers = rendered
    region = Region(box_min=[-0.35, -0.85, -0.65], box_max=[0.35, -0.15, 0.05], set_albedo=0.0)
    sel = region.select(buffers)
    assert sel.any()
    out, edited = apply_edits(buffers, EditSpec([region]), LUT, SPEC)
    out = out.reshape(-1, 3)
    _, diffuse, specular = shade_pixel(edited, LUT, SPEC)
    assert np.all(diffuse[sel] == 0)
    np.testing.assert_array_equal(out[sel], specular[sel])
    base = frame["beauty"].reshape(-1, 3)
    assert np.array_equal(out[~sel], base[~sel])


def test_roughness_override_selects_sharp_level(rendered):
    _, frame, buffers = rendered
    mask = np.zeros(buffers.hit.shape, bool)
    mask[100:140] = True
    out, edited = apply_edits(buffers, EditSpec([Region(mask=mask, set_roughness=GAMMA_MIN)]), LUT, SPEC)
    ratio = edited.d_reflect[mask] / SPEC.d0
    w = interp_weights(GAMMA_MIN * ratio, SPEC)
    assert np.all(w[:, 0] > 0.8)
    base = frame["beauty"].reshape(-1, 3)
    assert np.array_equal(out[~mask], base[~mask])


def test_empty_selection_warns(rendered):
    _, _, buffers = rendered
    with pytest.warns(EmptySelectionWarning):
        apply_edits(buffers, EditSpec([Region(box_min=[5, 5, 5], box_max=[6, 6, 6], set_albedo=0.1)]), LUT, SPEC)


def test_region_validation():
    with pytest.raises(ValueError):
        Region(box_min=[0, 0, 0])
    with pytest.raises(ValueError):
        Region(mask=np.ones(4, bool), set_albedo=1.5)
    with pytest.raises(ValueError):
        InsertedObject("sphere", [0, 0, 0], radius=0.1, alpha=2.0)


def test_sphere_trace():
    sdf = sdf_sphere([0, 0, -1.0], 0.5)
    o = np.zeros((3, 3))
    d = np.array([[0, 0, -1.0], [0, 1.0, 0], [0, 0, -1.0]])
    t = sphere_trace(sdf, o, d, 0.0, np.array([3.0, 3.0, 0.2]))
    assert t[0] == pytest.approx(0.5, abs=1e-4)
    assert np.isinf(t[1]) and np.isinf(t[2])
    # too few steps to converge on a grazing ray counts as a miss
    graze = np.array([[0.0, 0.49, 0.0]])
    assert np.isinf(sphere_trace(sdf, graze, np.array([[0, 0, -1.0]]), 0.0, 3.0, max_steps=3))


def test_insert_transparent_or_hidden_object_is_identity(rendered):
    cam, frame, buffers = rendered
    field = _room_field()
    base = frame["beauty"].reshape(-1, 3)
    clear = InsertedObject("sphere", [0, -0.2, 0.0], radius=0.15, alpha=1.0)
    out, mask = insert_object(buffers, base, clear, cam, field, LUT, SPEC)
    assert mask.any() and np.array_equal(out, base)
    hidden = InsertedObject("sphere", [0, -0.5, -0.3], radius=0.1, alpha=0.0)
    out, mask = insert_object(buffers, base, hidden, cam, field, LUT, SPEC)
    assert not mask.any() and np.array_equal(out, base)


def test_inserted_mirror_reflects_red_wall():
    red = Blob(sdf_slab(2, 0.8, 1.0), (0.9, 0.1, 0.1), 0.8, 0.2, _flat([1.0, 0.05, 0.05]))
    grey = Blob(sdf_slab(2, -1.0, -0.8), (0.5, 0.5, 0.5), 0.8, 0.2, _flat(0.05))
    field = AnalyticField([red, grey])
    cam = Camera(look_at([0, 0, 0.6], [0, 0, -1]), focal_from_fov(16, 50), 16, 16, near=0.05, far=2.0)
    st_ = RenderSettings(n_samples=32, n_reflect=32)
    frame, buffers, _ = render_view(field, cam, LUT, SPEC, st_)
    obj = InsertedObject("sphere", [0, 0, 0.0], radius=0.2, albedo=(0.5, 0.5, 0.5), roughness=GAMMA_MIN)
    out, mask = insert_object(buffers, frame["beauty"], obj, cam, field, LUT, SPEC, st_)
    assert mask.sum() > 10
    # only reflections heading back toward +z see the red wall
    rays = cam.rays()
    t_all = sphere_trace(obj.sdf, rays.origins, rays.directions, 0.05, 2.0)
    x_all = rays.origins + np.where(np.isfinite(t_all), t_all, 0.0)[:, None] * rays.directions
    wr = reflect(-rays.directions, (x_all - obj.center) / 0.2)
    facing = mask & (wr[:, 2] > 0.7)
    assert facing.sum() > 4
    px = out[facing]
    assert np.all(px[:, 0] > 2 * px[:, 1])
    # central pixel: specular is level-0 radiance along the mirror direction
    i = 8 * 16 + 8
    t = sphere_trace(obj.sdf, rays.origins[i:i + 1], rays.directions[i:i + 1], 0.05, 2.0)[0]
    x = rays.origins[i] + t * rays.directions[i]
    n = (x - obj.center) / np.linalg.norm(x - obj.center)
    q = query_prefiltered(field, x[None] + 1e-3 * n, reflect(-rays.directions[i:i + 1], n[None]), 32,
                          st_.reflect_offset, None, 0.0, 1.0)
    w = interp_weights(GAMMA_MIN * q["d_reflect"] / SPEC.d0, SPEC)
    assert w[0, 0] > 0.9
    assert q["pref"][0, 0, 0] > 0.9
