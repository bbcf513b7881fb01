import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weaksep.datagrid import DataFormatError, load_dataset, uniform_axis
from weaksep.plv import (compute_plv, load_phase_tensor, plv_dataset, save_phase_tensor,
                         stack_subjects)


def test_identical_phases_lock_perfectly(rng):
    p = rng.uniform(-np.pi, np.pi, (5, 3, 4))
    np.testing.assert_allclose(compute_plv(p, p), 1.0, atol=1e-15)


def test_opposed_pair_cancels():
    p1 = np.zeros((2, 1, 1))
    p2 = np.array([0.0, np.pi]).reshape(2, 1, 1)
    assert compute_plv(p1, p2)[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_four_quarter_turns_cancel():
    p2 = (np.arange(4) * np.pi / 2).reshape(4, 1, 1)
    assert compute_plv(np.zeros((4, 1, 1)), p2)[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_single_trial_is_one(rng):
    np.testing.assert_allclose(compute_plv(rng.normal(size=(1, 2, 2)),
                                           rng.normal(size=(1, 2, 2))), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-20, 20))
def test_range_and_common_phase_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    p1 = rng.uniform(-np.pi, np.pi, (7, 3, 2))
    p2 = rng.uniform(-np.pi, np.pi, (7, 3, 2))
    v = compute_plv(p1, p2)
    assert np.all((0 <= v) & (v <= 1))
    np.testing.assert_allclose(compute_plv(p1 + shift, p2 + shift), v, atol=1e-12)


def test_errors():
    with pytest.raises(ValueError, match="differ in shape"):
        compute_plv(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValueError, match="finite"):
        compute_plv(bad, np.zeros((2, 2, 2)))


def test_phase_tensor_io_and_stack(tmp_path, rng):
    s, t = np.linspace(4, 8, 3), np.linspace(0, 1, 5)
    p = rng.uniform(-np.pi, np.pi, (6, 3, 5))
    save_phase_tensor(tmp_path / "a.mwfd", p, s, t)
    back, s_axis, t_axis = load_phase_tensor(tmp_path / "a.mwfd")
    assert back.tobytes() == p.tobytes()
    subj = [plv_dataset(p, p[::-1], s_axis, t_axis), plv_dataset(p, p, s_axis, t_axis)]
    stacked = stack_subjects(subj)
    assert stacked.shape == (2, 3, 5)
    with pytest.raises(ValueError, match="different grids"):
        stack_subjects([subj[0], plv_dataset(p[:, :2], p[:, :2], uniform_axis(2), t_axis)])


def test_phase_tensor_requires_trial_count(tmp_path):
    from weaksep.datagrid import MultiwayDataset, save_dataset
    save_dataset(MultiwayDataset(np.zeros((1, 2, 2)), uniform_axis(2), uniform_axis(2)),
                 tmp_path / "d.mwfd")
    with pytest.raises(DataFormatError, match="n_T"):
        load_phase_tensor(tmp_path / "d.mwfd")
    # an ordinary dataset still loads
    assert load_dataset(tmp_path / "d.mwfd").n == 1
