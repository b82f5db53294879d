import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import tiny_arch
from hetcd.config import LossToggles
from hetcd.errors import DomainError, ShapeError, ValidationError
from hetcd.losses import (LossBreakdown, alignment_loss, compute_losses, cycle_loss, mean_all,
                          reconstruction_loss, total_loss, translation_loss)
from hetcd.model import init_parameters


def _codes(rng, shape=(5, 6, 3)):
    return [rng.uniform(-1, 1, shape) for _ in range(4)]


def test_mean_all_empty():
    with pytest.raises(DomainError):
        mean_all(np.zeros((0, 3)))


def test_reconstruction_perfect_is_zero(rng):
    x, y = rng.random((8, 8, 3)), rng.random((8, 8, 1))
    assert reconstruction_loss(x, y, x, y).item() == 0.0


def test_reconstruction_hand_value():
    x = np.zeros((2, 2, 1))
    x_rec = np.full((2, 2, 1), 0.5)
    y = np.ones((2, 2, 1))
    assert reconstruction_loss(x, y, x_rec, y).item() == 0.25


def test_reconstruction_matches_loop(rng):
    x, y, xr, yr = rng.random((4, 5, 3)), rng.random((4, 5, 1)), rng.random((4, 5, 3)), rng.random((4, 5, 1))
    expected = oracles.loop_mse(x, xr) + oracles.loop_mse(y, yr)
    assert reconstruction_loss(x, y, xr, yr).item() == pytest.approx(expected, abs=1e-12)


def test_reconstruction_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        reconstruction_loss(rng.random((4, 4, 3)), rng.random((4, 4, 1)), rng.random((4, 5, 3)), rng.random((4, 4, 1)))


def test_translation_loss_zero_when_recovered(rng):
    c_x, c_y = rng.random((4, 4, 2)), rng.random((4, 4, 2))
    s_x, s_y = rng.random(6), rng.random(6)
    assert translation_loss(c_x, c_y, s_x, s_y, c_x, c_y, s_x, s_y).item() == 0.0


def test_translation_loss_single_style_error():
    z = np.zeros((2, 2, 1))
    s = np.zeros(4)
    s_bad = np.array([1.0, 0.0, 0.0, 0.0])
    assert translation_loss(z, z, s, s, z, z, s, s_bad).item() == 0.25


def test_translation_matches_loop(rng):
    c = [rng.random((3, 4, 2)) for _ in range(4)]
    s = [rng.random(5) for _ in range(4)]
    expected = (oracles.loop_mse(c[0], c[2]) + oracles.loop_mse(c[1], c[3])
                + oracles.loop_mse(s[0], s[2]) + oracles.loop_mse(s[1], s[3]))
    got = translation_loss(c[0], c[1], s[0], s[1], c[2], c[3], s[2], s[3]).item()
    assert got == pytest.approx(expected, abs=1e-12)


def test_cycle_loss(rng):
    x, y = rng.random((4, 4, 3)), rng.random((4, 4, 1))
    assert cycle_loss(x, y, x, y).item() == 0.0
    assert cycle_loss(x, y, x + 0.1, y).item() == pytest.approx(0.01, abs=1e-12)


def test_alignment_all_unchanged_equal_codes(rng):
    c = rng.uniform(-1, 1, (4, 4, 3))
    assert alignment_loss(c, c, c, c, np.zeros((4, 4))).item() == 0.0


def test_alignment_all_changed_equal_codes(rng):
    c = rng.uniform(-1, 1, (4, 4, 3))
    assert alignment_loss(c, c, c, c, np.ones((4, 4))).item() == 2.0


def test_alignment_margin_hinge():
    c_x = np.ones((2, 2, 1))
    c_y_t = -np.ones((2, 2, 1))  # squared distance 4 = m
    assert alignment_loss(c_x, c_y_t, c_x, c_x, np.ones((2, 2))).item() == 1.0


def test_alignment_unchanged_distance_one(rng):
    c = rng.uniform(-1, 1, (3, 3, 2))
    assert alignment_loss(c, c + 1, c, c, np.zeros((3, 3))).item() == pytest.approx(1.0, abs=1e-12)


def test_alignment_rejects_non_binary_mask(rng):
    c = rng.random((3, 3, 2))
    with pytest.raises(ValidationError):
        alignment_loss(c, c, c, c, np.full((3, 3), 0.5))


def test_alignment_mask_shape(rng):
    c = rng.random((3, 3, 2))
    with pytest.raises(ShapeError):
        alignment_loss(c, c, c, c, np.zeros((3, 4)))


def test_alignment_matches_loop(rng):
    c_x, c_y_t, c_x_t, c_y = _codes(rng)
    p = rng.integers(0, 2, (5, 6))
    got = alignment_loss(c_x, c_y_t, c_x_t, c_y, p).item()
    assert got == pytest.approx(oracles.loop_alignment(c_x, c_y_t, c_x_t, c_y, p), abs=1e-12)


def test_alignment_nchw_broadcast_matches_channel_last(rng):
    c_x, c_y_t, c_x_t, c_y = _codes(rng, (5, 6, 3))
    p = rng.integers(0, 2, (5, 6))
    nchw = [torch.as_tensor(a).permute(2, 0, 1)[None] for a in (c_x, c_y_t, c_x_t, c_y)]
    a = alignment_loss(*nchw, p).item()
    b = alignment_loss(*nchw, p[None]).item()
    c = alignment_loss(*nchw, p[None, None]).item()
    d = alignment_loss(c_x, c_y_t, c_x_t, c_y, p).item()
    assert a == b == c
    assert a == pytest.approx(d, abs=1e-14)


codes = arrays(np.float64, (3, 4, 2), elements=st.floats(-1, 1))
masks = arrays(np.int8, (3, 4), elements=st.integers(0, 1))


@settings(max_examples=60, deadline=None)
@given(c_x=codes, c_y_t=codes, c_x_t=codes, c_y=codes, p=masks)
def test_alignment_bounds(c_x, c_y_t, c_x_t, c_y, p):
    # squared distances of tanh codes are at most m = 4, so every term is non-negative
    value = alignment_loss(c_x, c_y_t, c_x_t, c_y, p).item()
    assert 0.0 <= value <= 8.0 + 1e-12


@settings(max_examples=60, deadline=None)
@given(c_x=codes, c_y=codes, p=masks)
def test_alignment_symmetric_in_pairs(c_x, c_y, p):
    a = alignment_loss(c_x, c_y, c_y, c_x, p).item()
    b = alignment_loss(c_y, c_x, c_x, c_y, p).item()
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(c_x=codes, c_y_t=codes, c_x_t=codes, c_y=codes, p=masks)
def test_alignment_monotone_in_unchanged_distance(c_x, c_y_t, c_x_t, c_y, p):
    # moving c_y_t farther from c_x on unchanged pixels cannot lower the loss
    unchanged = (p == 0)[..., None]
    farther = np.where(unchanged, c_x + 1.5 * (c_y_t - c_x), c_y_t)
    assert (alignment_loss(c_x, farther, c_x_t, c_y, p).item()
            >= alignment_loss(c_x, c_y_t, c_x_t, c_y, p).item() - 1e-12)


def test_total_is_unweighted_sum():
    parts = LossBreakdown(0.1, 0.2, 0.3, 0.4)
    assert total_loss(parts) == 0.1 + 0.2 + 0.3 + 0.4
    assert parts.as_floats()["total"] == pytest.approx(1.0, abs=1e-15)


def _forward(rng, dtype=torch.float64):
    model = init_parameters(4, tiny_arch(), dtype=dtype)
    x = torch.as_tensor(rng.random((2, 4, 8, 8)), dtype=dtype)
    y = torch.as_tensor(rng.random((2, 2, 8, 8)), dtype=dtype)
    p = torch.as_tensor(rng.integers(0, 2, (2, 8, 8)), dtype=dtype)
    return model, model(x, y), x, y, p


def test_compute_losses_components(rng):
    _, out, x, y, p = _forward(rng)
    parts = compute_losses(out, x, y, p)
    assert parts.recon.item() == pytest.approx(
        reconstruction_loss(x, y, out["x_rec"], out["y_rec"]).item(), abs=1e-15)
    floats = parts.as_floats()
    assert abs(parts.total.item() - sum(floats[k] for k in ("recon", "trans", "cyc", "align"))) <= 1e-12


@pytest.mark.parametrize("name", ["recon", "trans", "cyc", "align"])
def test_disabled_component_is_zero(rng, name):
    model, out, x, y, p = _forward(rng)
    parts = compute_losses(out, x, y, p, LossToggles().without(name))
    assert float(getattr(parts, name)) == 0.0
    full = compute_losses(out, x, y, p)
    floats = full.as_floats()
    others = sum(floats[k] for k in ("recon", "trans", "cyc", "align") if k != name)
    assert parts.total.item() == pytest.approx(others, abs=1e-12)


def test_all_disabled_total_zero(rng):
    _, out, x, y, p = _forward(rng)
    parts = compute_losses(out, x, y, p, LossToggles(False, False, False, False))
    assert parts.total.item() == 0.0


def test_reconstruction_only_reaches_encoders(rng):
    model, out, x, y, p = _forward(rng)
    compute_losses(out, x, y, p, LossToggles(True, False, False, False)).total.backward()
    assert model.content_x.net[0].weight.grad.abs().sum() > 0
    assert model.style_y.net[0].weight.grad.abs().sum() > 0
