import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iblkit import train as train_mod
from iblkit.camera import Camera, focal_from_fov, look_at
from iblkit.field import FieldConfig, Rays, init_params, load_checkpoint, march
from iblkit.prefilter import PrefilterSpec, gaussian_prefilter
from iblkit.shade import RenderSettings
from iblkit.train import (
    FROZEN_IN_PHASE3,
    PHASE_TERMS,
    LossWeights,
    MissingPriorError,
    PriorImages,
    RayBatch,
    RayDataset,
    Schedule,
    TrainConfig,
    TrainError,
    TrainView,
    adam_init,
    backward_and_step,
    batch_loss,
    loss_ireg,
    loss_pref,
    loss_prior,
    loss_render,
    priors_from_aovs,
    smoothed,
    total_loss,
    train,
)
from iblkit.validate import gradient_errors

SHRUNK = FieldConfig(pos_layers=2, pos_width=8, skip=1, dir_width=8, pos_freqs=2, dir_freqs=1,
                     dtype="float64")
SETTINGS = RenderSettings(n_samples=8, n_reflect=6, background=0.1)
SPEC = PrefilterSpec(d0=1.0)
TINY = FieldConfig(pos_layers=2, pos_width=16, skip=1, dir_width=8, pos_freqs=3, dir_freqs=1)


def _shrunk(seed=3):
    p = init_params(SHRUNK, seed=seed)
    p.tensors["sigma.b"][:] = 2.0  # dense enough that every ray hits
    return p


def _batch(seed=0, n=4):
    rng = np.random.default_rng(seed)
    o = rng.uniform(-0.3, 0.3, (n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return RayBatch(Rays(o, d, 0.05, 1.5), rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 4, 3)),
                    rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, n), 0.4)


def _views(n=3, size=8, seed=0):
    rng = np.random.default_rng(seed)
    views = []
    for k in range(n):
        eye = [0.3 * np.cos(k), 0.1, 0.6 + 0.1 * np.sin(k)]
        cam = Camera(look_at(eye, [0, 0, -0.5]), focal_from_fov(size, 60), size, size, 0.05, 2.0)
        views.append(TrainView(cam, rng.uniform(0.0, 0.5, (size, size, 3))))
    return views


def _priors(views, seed=0):
    rng = np.random.default_rng(seed)
    h, w = views[0].image.shape[:2]
    return PriorImages([rng.uniform(0, 1, (h, w, 3)) for _ in views],
                       [rng.uniform(0, 1, (h, w)) for _ in views])


def _tiny_config(steps=6, **kw):
    return TrainConfig(schedule=Schedule(steps, 2, 4, batch_rays=16), network=TINY,
                       render=RenderSettings(n_samples=12, n_reflect=6), spec=SPEC, **kw)


# ---------------------------------------------------------------------------
# losses

def test_loss_render_examples():
    x = np.random.default_rng(0).uniform(size=(5, 3))
    assert loss_render(x, x) == 0.0
    assert loss_render([[0.1, 0.0, 0.0]], [[0.0, 0.0, 0.0]]) == pytest.approx(0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000))
def test_loss_render_is_quadratic(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    assert loss_render(b + 2 * (a - b), b) == pytest.approx(4 * loss_render(a, b), rel=1e-9)


def test_losses_reject_non_finite_and_mismatched_input():
    with pytest.raises(TrainError, match="non-finite"):
        loss_render([[np.nan, 0, 0]], [[0, 0, 0]])
    with pytest.raises(TrainError, match="shapes"):
        loss_render(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(TrainError, match="level count"):
        loss_pref(np.zeros((2, 4, 3)), np.zeros((2, 3, 3)))


def test_loss_pref_is_a_sum_over_levels():
    rng = np.random.default_rng(1)
    target = rng.uniform(size=(6, 4, 3))
    assert loss_pref(target, target) == 0.0
    pred = target.copy()
    pred[:, 2] += rng.normal(size=(6, 3))
    assert loss_pref(pred, target) == pytest.approx(loss_render(pred[:, 2], target[:, 2]))
    two = target.copy()
    two[:, 0, 0] += 0.1
    two[:, 3, 1] -= 0.1
    assert loss_pref(two, target) == pytest.approx(0.02)
    # list-of-levels form matches the stacked form
    assert loss_pref([pred[:, j] for j in range(4)], target) == loss_pref(pred, target)


def test_prior_and_irradiance_regularizer_examples():
    a = np.random.default_rng(2).uniform(size=(7, 3))
    assert loss_prior(a, a) == 0.0
    assert loss_ireg(np.full(9, 0.3), 0.3) == 0.0
    assert loss_ireg(np.full(9, 0.5), 0.3) == pytest.approx(0.04)
    with pytest.raises(MissingPriorError):
        loss_prior(a, None)
    with pytest.raises(MissingPriorError):
        loss_ireg(a[:, 0], None)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_irradiance_regularizer_ignores_batch_order(n, seed):
    rng = np.random.default_rng(seed)
    irr = rng.uniform(0, 2, n)
    assert loss_ireg(irr, 0.7) == pytest.approx(loss_ireg(rng.permutation(irr), 0.7), rel=1e-12)


def test_total_loss_phase_gating():
    parts = {"render": 0.1, "pref": 0.5, "prior": 0.3, "ireg": 0.4}
    assert total_loss(parts, LossWeights(), 1) == 0.5
    assert total_loss({"render": 0.1, "pref": 0.2, "prior": 0.3, "ireg": 0.4}, LossWeights(0.1), 3) \
        == pytest.approx(0.64)
    assert total_loss(parts, LossWeights(), 2) == pytest.approx(0.6)
    zero = LossWeights(0.0)
    assert total_loss(parts, zero, 3) == total_loss(dict(parts, ireg=123.0), zero, 3)
    with pytest.raises(TrainError, match="needs loss parts"):
        total_loss({"pref": 1.0}, LossWeights(), 2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.floats(0, 2), st.sampled_from([1, 2, 3]))
def test_total_loss_equals_weighted_parts(vals, lam, phase):
    parts = dict(zip(("render", "pref", "prior", "ireg"), vals))
    w = LossWeights(lam)
    expected = sum(s * parts[k] for k, s in w.scales(phase).items())
    assert abs(total_loss(parts, w, phase) - expected) < 1e-9


def test_loss_weights_and_schedule_validation():
    with pytest.raises(ValueError):
        LossWeights(-0.1)
    with pytest.raises(ValueError):
        Schedule(100, 50, 40)
    s = Schedule()
    assert (s.total_steps, s.phase1_end, s.phase2_end) == (5000, 500, 4000)
    assert [s.phase(k) for k in (0, 499, 500, 3999, 4000, 4999)] == [1, 1, 2, 2, 3, 3]
    assert s.learning_rate(0) == pytest.approx(5e-4)
    assert s.learning_rate(5000) == pytest.approx(5e-5)


# ---------------------------------------------------------------------------
# gradients

@pytest.mark.parametrize("phase,term", [(p, t) for p in (1, 2, 3) for t in PHASE_TERMS[p]])
def test_gradients_match_central_differences(phase, term):
    errs = gradient_errors(_shrunk(), _batch(), phase, term, SETTINGS, SPEC)
    assert max(errs.values()) < 1e-3, errs


def test_phase_gating_zeroes_head_gradients():
    p, b = _shrunk(), _batch()
    _, g1, _ = batch_loss(p, b, 1, spec=SPEC, settings=SETTINGS)
    for head in ("albedo", "irradiance", "roughness"):
        assert not np.any(g1[f"{head}.W"]) and not np.any(g1[f"{head}.b"])
    _, g2, _ = batch_loss(p, b, 2, spec=SPEC, settings=SETTINGS)
    assert np.any(g2["roughness.W"])
    _, g3, _ = batch_loss(p, b, 3, spec=SPEC, settings=SETTINGS)
    assert not np.any(g3["roughness.W"]) and not np.any(g3["roughness.b"])
    assert np.any(g3["albedo.W"])


def test_phase3_needs_priors():
    b = _batch()
    b.prior_albedo = None
    with pytest.raises(MissingPriorError):
        batch_loss(_shrunk(), b, 3, spec=SPEC, settings=SETTINGS)


def test_zero_loss_leaves_parameters_unchanged():
    p, b = _shrunk(), _batch()
    b.levels = march(p, b.rays, SETTINGS.n_samples, None, True, SETTINGS.background)["pref"]
    state = adam_init(p)
    new, rep = backward_and_step(p, b, state, 1, 5e-4, spec=SPEC, settings=SETTINGS)
    assert rep["total"] == 0.0
    for k in p.tensors:
        assert np.array_equal(new.tensors[k], p.tensors[k])


def test_frozen_roughness_is_bitwise_unchanged_in_phase3():
    p, state = _shrunk(), None
    state = adam_init(p)
    p, _ = backward_and_step(p, _batch(0), state, 2, 1e-3, spec=SPEC, settings=SETTINGS)
    assert np.any(state.m["roughness.W"])  # nonzero momentum going into phase 3
    q, _ = backward_and_step(p, _batch(1), state, 3, 1e-3, spec=SPEC, settings=SETTINGS)
    for k in FROZEN_IN_PHASE3:
        assert np.array_equal(q.tensors[k], p.tensors[k])
    assert not np.array_equal(q.tensors["albedo.W"], p.tensors["albedo.W"])


def test_non_finite_gradient_skips_the_step(monkeypatch):
    p, b = _shrunk(), _batch()
    real = train_mod.batch_loss

    def poisoned(*args, **kw):
        parts, grads, geo = real(*args, **kw)
        grads["pos0.W"] = grads["pos0.W"] * np.nan
        return parts, grads, geo

    monkeypatch.setattr(train_mod, "batch_loss", poisoned)
    state = adam_init(p)
    new, rep = backward_and_step(p, b, state, 1, 1e-3, spec=SPEC, settings=SETTINGS)
    assert rep["skipped"] and state.skipped == 1 and state.t == 0
    assert all(np.array_equal(new.tensors[k], p.tensors[k]) for k in p.tensors)


# ---------------------------------------------------------------------------
# priors and datasets

def test_priors_from_aovs_scale_each_view_uniformly():
    rng = np.random.default_rng(0)
    alb = [rng.uniform(0.1, 0.5, (4, 4, 3)) for _ in range(3)]
    irr = [rng.uniform(0.1, 1.0, (4, 4)) for _ in range(3)]
    exact = priors_from_aovs(alb, irr, noise=0.0)
    assert all(np.array_equal(a, b) for a, b in zip(exact.albedo, alb))
    assert exact.mean_irradiance == pytest.approx(np.mean([i.mean() for i in irr]))
    noisy = priors_from_aovs(alb, irr, noise=0.2, seed=1)
    for a, b, i, j in zip(noisy.albedo, alb, noisy.irradiance, irr):
        ratio = (a / b).reshape(-1, 3)
        assert np.allclose(ratio, ratio[0])
        assert np.allclose(i / j, (i / j).flat[0])
    assert not np.allclose(noisy.irradiance[0] / irr[0], noisy.irradiance[1] / irr[1])


def test_prior_images_validation():
    with pytest.raises(ValueError, match="albedo"):
        PriorImages([np.full((2, 2, 3), 1.5)], [np.ones((2, 2))])
    with pytest.raises(ValueError, match="irradiance"):
        PriorImages([np.ones((2, 2, 3))], [-np.ones((2, 2))])


def test_ray_dataset_targets():
    views = _views()
    data = RayDataset(views, SPEC, _priors(views))
    assert len(data) == 3 * 64
    assert np.array_equal(data.levels[:64, 0], views[0].image.reshape(-1, 3))
    assert np.allclose(data.levels[:64, 2], gaussian_prefilter(views[0].image, 2, SPEC).reshape(-1, 3))
    with pytest.raises(TrainError, match="empty"):
        RayDataset([], SPEC)


# ---------------------------------------------------------------------------
# training loop

def test_zero_steps_returns_initial_params():
    cfg = _tiny_config(steps=0)
    res = train(_views(), None, cfg)
    init = init_params(TINY, cfg.seed)
    assert res.log == []
    assert all(np.array_equal(res.params.tensors[k], init.tensors[k]) for k in init.tensors)


def test_training_is_deterministic_and_resumable(tmp_path):
    views = _views()
    priors = _priors(views)
    cfg = _tiny_config()
    a = train(views, priors, cfg, out_dir=tmp_path)
    b = train(views, priors, cfg)
    half = train(views, priors, cfg, stop_step=3)
    rest = train(views, priors, cfg, params=half.params, state=half.state, start_step=3)
    for k in a.params.tensors:
        assert np.array_equal(a.params.tensors[k], b.params.tensors[k])
        assert np.array_equal(a.params.tensors[k], rest.params.tensors[k])
    records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == list(range(6))
    assert [r["phase"] for r in records] == [1, 1, 2, 2, 3, 3]
    assert set(records[-1]["parts"]) == {"render", "pref", "prior", "ireg"}
    assert all(r["wall_ms"] > 0 for r in records)
    for phase in (1, 2, 3):
        params, meta = load_checkpoint(tmp_path / f"phase{phase}.ckpt")
        assert meta["phase"] == phase
    final, _ = load_checkpoint(tmp_path / "phase3.ckpt")
    assert np.array_equal(final.tensors["pos0.W"], a.params.tensors["pos0.W"])


def test_training_errors():
    with pytest.raises(TrainError, match="empty"):
        train([], None, _tiny_config())
    with pytest.raises(MissingPriorError):
        train(_views(), None, _tiny_config())


def test_smoothed_window():
    v = np.arange(10.0)
    s = smoothed(v, window=3)
    assert s[0] == 0.0 and s[1] == 0.5 and s[5] == pytest.approx(4.0)
