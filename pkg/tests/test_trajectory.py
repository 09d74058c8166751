import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillseg.errors import DataError
from skillseg.trajectory import Trajectory, mean_velocity, resample


def test_trajectory_validation():
    with pytest.raises(DataError):
        Trajectory(np.array([[1.0]]))  # T < 2
    with pytest.raises(DataError):
        Trajectory(np.array([[1.0], [np.nan]]))
    traj = Trajectory(np.array([0.0, 1.0, 2.0]))  # 1-D promoted to T x 1
    assert traj.T == 3 and traj.D == 1


def test_resample_linear_data_trivial():
    traj = Trajectory(np.array([0.0, 1.0, 2.0]))
    out = resample(traj, 5)
    assert np.allclose(out.values[:, 0], [0.0, 0.5, 1.0, 1.5, 2.0])


def test_resample_identity_length():
    rng = np.random.default_rng(0)
    traj = Trajectory(rng.standard_normal((17, 3)))
    out = resample(traj, 17)
    assert np.array_equal(out.values, traj.values)


def test_resample_sine_roundtrip():
    # frozen oracle: computed 9.2e-4 for this sine before the build
    t = np.linspace(0.0, 1.0, 50)
    traj = Trajectory(np.sin(2 * np.pi * t)[:, None])
    back = resample(resample(traj, 200), 50)
    assert np.abs(back.values - traj.values).max() < 1e-2


@given(t_in=st.integers(2, 40), t_out=st.integers(2, 80),
       slope=st.floats(-2, 2), intercept=st.floats(-1, 1))
@settings(max_examples=50, deadline=None)
def test_resample_exact_on_affine(t_in, t_out, slope, intercept):
    times = np.linspace(0.0, 1.0, t_in)
    traj = Trajectory((slope * times + intercept)[:, None])
    out = resample(traj, t_out)
    expected = slope * np.linspace(0.0, 1.0, t_out) + intercept
    assert np.allclose(out.values[:, 0], expected, atol=1e-12)


@given(data=st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=30),
       t_out=st.integers(2, 50))
@settings(max_examples=50, deadline=None)
def test_resample_stays_in_range(data, t_out):
    traj = Trajectory(np.asarray(data)[:, None])
    out = resample(traj, t_out)
    assert out.values.min() >= min(data) - 1e-12
    assert out.values.max() <= max(data) + 1e-12


def test_mean_velocity_constant_is_zero():
    traj = Trajectory(np.full((9, 2), 0.7))
    assert np.array_equal(mean_velocity(traj), np.zeros((9, 1)))


def test_mean_velocity_two_dims():
    traj = Trajectory(np.array([[0.0, 0.0], [1.0, 3.0]]))
    sig = mean_velocity(traj)
    assert sig.shape == (2, 1)
    assert np.allclose(sig[:, 0], [0.0, 2.0])


def test_mean_velocity_ramp():
    traj = Trajectory(0.1 * np.arange(6)[:, None])
    sig = mean_velocity(traj)
    assert np.allclose(sig[1:, 0], 0.1)
    assert sig[0, 0] == 0.0


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=25))
@settings(max_examples=50, deadline=None)
def test_mean_velocity_time_reversal(data):
    values = np.asarray(data)[:, None]
    fwd = mean_velocity(Trajectory(values))
    bwd = mean_velocity(Trajectory(values[::-1]))
    # reversed trajectory: negated, index-reflected signal (forced 0 up front)
    assert np.allclose(bwd[1:, 0], -fwd[1:, 0][::-1])
