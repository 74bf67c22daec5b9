import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechspace.errors import ConfigurationError, EmptyInputError
from mechspace.systems import Trajectory
from mechspace.windows import (SplitSpec, extract_fragments, extract_history_pairs, field_patches, fingerprint,
                               split_bounds, split_pairs, stack_pairs)


def _ramp(T, d=2):
    states = np.arange(T * d, dtype=float).reshape(T, d)
    return Trajectory(states, np.arange(T, dtype=float))


def test_pair_count_small():
    pairs = extract_history_pairs(_ramp(10), h=3, lead=2)
    assert len(pairs) == 6
    p = pairs[0]
    np.testing.assert_array_equal(p.history, _ramp(10).states[0:3])
    np.testing.assert_array_equal(p.target, _ramp(10).states[4])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(1, 6))
def test_pair_count_formula(T, h, lead):
    traj = _ramp(T)
    if T < h + lead:
        with pytest.raises(EmptyInputError):
            extract_history_pairs(traj, h, lead)
        return
    pairs = extract_history_pairs(traj, h, lead)
    assert len(pairs) == T - h - lead + 1
    for p in pairs:
        np.testing.assert_array_equal(p.target, traj.states[p.t_index + lead])


def test_fragment_count_and_wrap():
    M = 16
    states = np.tile(np.arange(M, dtype=float), (20, 1)) + 100 * np.arange(20)[:, None]
    traj = Trajectory(states, np.arange(20, dtype=float))
    # n_time = 20 - 10 - 1 + 1 = 10 -> 2 time anchors x 4 spatial anchors
    frags = extract_fragments(traj, spatial_width=3, time_depth=10, lead=1, spatial_stride=4, time_stride=5)
    assert len(frags) == 8
    left = next(f for f in frags if f.location == 0)
    np.testing.assert_array_equal(left.inputs[-1], states[left.t_index][[15, 0, 1]])


def test_field_patches_match_fragments(rng):
    states = rng.standard_normal((6, 9))
    traj = Trajectory(states, np.arange(6, dtype=float))
    frags = extract_fragments(traj, spatial_width=5, time_depth=2, lead=1)
    patches = field_patches(states[3:5], 5)
    for f in frags:
        if f.t_index == 4:
            np.testing.assert_array_equal(patches[f.location], f.inputs)


def test_split_sizes():
    parts = split_pairs(list(range(100)), SplitSpec(0.8, 0.1, 0.1))
    assert [len(p) for p in parts] == [80, 10, 10]
    assert parts[0] == list(range(80))
    assert split_bounds(100, SplitSpec(0.8, 0.1, 0.1)) == (80, 90)


def test_split_empty_part_raises():
    with pytest.raises(ConfigurationError):
        split_pairs(list(range(100)), SplitSpec(0.99, 0.005, 0.005))


def test_split_spec_sum():
    with pytest.raises(ConfigurationError):
        SplitSpec(0.5, 0.1, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 500), st.sampled_from(["temporal_contiguous", "shuffled"]))
def test_split_is_partition(n, mode):
    parts = split_pairs(list(range(n)), SplitSpec(0.7, 0.15, 0.15, mode, seed=3))
    assert sorted(sum(parts, [])) == list(range(n))


def test_stack_and_fingerprint():
    X, Y = stack_pairs(extract_history_pairs(_ramp(8), 2, 1))
    assert X.shape == (6, 2, 2) and Y.shape == (6, 2)
    assert fingerprint(X, Y) == fingerprint(X.copy(), Y.copy())
    assert fingerprint(X, Y) != fingerprint(X, Y + 1e-12)
