import numpy as np
import pytest

from skillseg.diffcore import Tensor, backward, const, grad_check, tsum
from skillseg.transformer import (
    Window,
    extract_window,
    paste_window,
    st_extract,
    st_paste,
)


def test_window_validation_and_clamp():
    with pytest.raises(ValueError):
        Window(-0.1, 0.5)
    with pytest.raises(ValueError):
        Window(0.2, 0.0)
    w = Window(0.7, 0.5)  # exceeds 1: duration clamped
    assert w.offset + w.duration == pytest.approx(1.0)


def test_extract_identity_window_bitwise():
    rng = np.random.default_rng(0)
    values = rng.standard_normal((200, 3))
    out = extract_window(values, Window(0.0, 1.0), 200)
    assert np.abs(out - values).max() < 1e-12


def test_extract_affine_exact_any_window():
    t = np.linspace(0.0, 1.0, 200)
    values = t[:, None]  # ramp tau(t) = t
    out = extract_window(values, Window(0.25, 0.5), 50)
    expected = 0.25 + 0.5 * np.arange(50) / 49
    assert np.allclose(out[:, 0], expected, atol=1e-12)


def test_extract_clip_flag():
    values = np.linspace(0, 1, 50)[:, None]
    out, flags = st_extract(const(values[None]), const([[0.8]]), const([[0.5]]),
                            10, return_flags=True)
    assert flags[0]
    assert out.data[0, -1, 0] == pytest.approx(1.0)  # clamped to boundary sample
    _, flags_ok = st_extract(const(values[None]), const([[0.2]]), const([[0.5]]),
                             10, return_flags=True)
    assert not flags_ok[0]


def test_extract_linear_in_values():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((1, 60, 2))
    b = rng.standard_normal((1, 60, 2))
    off, dur = const([[0.17]]), const([[0.61]])
    out_a = st_extract(const(a), off, dur, 20).data
    out_b = st_extract(const(b), off, dur, 20).data
    out_ab = st_extract(const(2.0 * a + 3.0 * b), off, dur, 20).data
    assert np.abs(out_ab - (2.0 * out_a + 3.0 * out_b)).max() < 1e-12


def test_paste_linear_in_sub():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((1, 20, 2))
    b = rng.standard_normal((1, 20, 2))
    off, dur = const([[0.17]]), const([[0.61]])
    out_a = st_paste(const(a), off, dur, 60).data
    out_b = st_paste(const(b), off, dur, 60).data
    out_ab = st_paste(const(2.0 * a + 3.0 * b), off, dur, 60).data
    assert np.abs(out_ab - (2.0 * out_a + 3.0 * out_b)).max() < 1e-12


def test_paste_identity_window():
    rng = np.random.default_rng(3)
    sub = rng.standard_normal((200, 2))
    canvas = paste_window(np.zeros((200, 2)), sub, Window(0.0, 1.0))
    assert np.abs(canvas - sub).max() < 1e-12


def test_paste_extract_roundtrip_smooth():
    t = np.linspace(0.0, 1.0, 50)
    sub = np.stack([np.sin(2 * np.pi * t + p) for p in (0.0, 1.0)], axis=1) * 0.5
    for window in (Window(0.3, 0.4), Window(0.13, 0.55), Window(0.61, 0.37)):
        canvas = paste_window(np.zeros((200, 2)), sub, window)
        back = extract_window(canvas, window, 50)
        assert np.abs(back - sub).max() < 2e-2


def test_paste_disjoint_windows_union():
    sub = np.linspace(0.2, 1.0, 20)[:, None]
    wa, wb = Window(0.1, 0.2), Window(0.6, 0.25)
    only_a = paste_window(np.zeros((200, 1)), sub, wa)
    only_b = paste_window(np.zeros((200, 1)), sub, wb)
    both = paste_window(only_a, sub, wb)
    assert np.abs(both - (only_a + only_b)).max() == 0.0
    # zero outside both windows (allow the one-cell clamp + fade skirt)
    outside = np.ones(200, dtype=bool)
    for w in (wa, wb):
        lo = int(np.floor(w.offset * 199)) - 1
        hi = int(np.ceil((w.offset + w.duration) * 199)) + 1
        outside[max(lo, 0):hi + 1] = False
    assert np.abs(both[outside]).max() == 0.0


def test_paste_tiny_duration_covers_a_step():
    sub = np.full((10, 1), 0.8)
    canvas = paste_window(np.zeros((50, 1)), sub, Window(0.503, 1e-6))
    assert (np.abs(canvas) > 0.0).sum() >= 1


def test_paste_continuous_in_duration():
    sub = np.linspace(0.3, 0.9, 20)[:, None]
    durs = np.linspace(0.35, 0.45, 1001)
    prev = None
    for dur in durs:
        canvas = paste_window(np.zeros((40, 1)), sub, Window(0.2, float(dur)))
        if prev is not None:
            assert np.abs(canvas - prev).max() < 0.01
        prev = canvas


def _margin_ok(positions):
    return (np.abs(positions - np.round(positions)) > 2e-3).all()


def test_extract_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    done = 0
    worst = 0.0
    for trial in range(200):
        off = float(rng.uniform(0.05, 0.4))
        dur = float(rng.uniform(0.2, 0.5))
        pos = (off + dur * np.linspace(0, 1, 9)) * 39
        if not _margin_ok(pos):
            continue
        values = rng.standard_normal((1, 40, 2))
        proj = rng.standard_normal((1, 9, 2))
        worst = max(worst, grad_check(
            lambda lv: tsum(st_extract(lv["v"], lv["o"], lv["d"], 9) * proj),
            {"v": values, "o": np.array([[off]]), "d": np.array([[dur]])}))
        done += 1
        if done == 10:
            break
    assert done == 10
    assert worst < 1e-4


def test_paste_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    done = 0
    worst = 0.0
    for trial in range(300):
        off = float(rng.uniform(0.05, 0.4))
        dur = float(rng.uniform(0.2, 0.5))
        edges = np.array([off, off + dur]) * 39
        tn = np.linspace(0, 1, 40)
        u = (tn - off) / dur
        inside = (u > 0) & (u < 1)
        if not (_margin_ok(edges) and _margin_ok(u[inside] * 8)):
            continue
        sub = rng.standard_normal((1, 9, 2))
        proj = rng.standard_normal((1, 40, 2))
        worst = max(worst, grad_check(
            lambda lv: tsum(st_paste(lv["s"], lv["o"], lv["d"], 40) * proj),
            {"s": sub, "o": np.array([[off]]), "d": np.array([[dur]])}))
        done += 1
        if done == 10:
            break
    assert done == 10
    assert worst < 1e-4


def test_batched_rows_independent():
    rng = np.random.default_rng(6)
    values = rng.standard_normal((3, 50, 2))
    offs = np.array([[0.1], [0.3], [0.05]])
    durs = np.array([[0.5], [0.21], [0.77]])
    batched = st_extract(const(values), const(offs), const(durs), 12).data
    for r in range(3):
        single = st_extract(const(values[r:r + 1]), const(offs[r:r + 1]),
                            const(durs[r:r + 1]), 12).data[0]
        assert np.array_equal(batched[r], single)
