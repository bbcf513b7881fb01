"""Phase locking value surfaces from per-trial phase tensors."""
import numpy as np

from .datagrid import GridAxis, MultiwayDataset, read_mwfd, write_mwfd, DataFormatError

__all__ = ["compute_plv", "plv_dataset", "stack_subjects", "load_phase_tensor",
           "save_phase_tensor"]


def compute_plv(phase1, phase2):
    """Modulus of the trial-averaged unit phase-difference vector.

    Parameters
    ----------
    phase1, phase2 : array, shape (n_trials, n_freqs, n_times)
        Phases in radians.

    Returns
    -------
    array, shape (n_freqs, n_times), values in [0, 1]
    """
    p1 = np.asarray(phase1, dtype=float)
    p2 = np.asarray(phase2, dtype=float)
    if p1.shape != p2.shape:
        raise ValueError(f"phase tensors differ in shape: {p1.shape} vs {p2.shape}")
    if p1.ndim != 3 or p1.shape[0] < 1:
        raise ValueError("phase tensors must have shape (n_trials >= 1, |S|, |T|)")
    if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
        raise ValueError("phases must be finite")
    plv = np.abs(np.mean(np.exp(1j * (p1 - p2)), axis=0))
    return np.clip(plv, 0.0, 1.0)


def plv_dataset(phase1, phase2, s_axis, t_axis):
    """PLV surface as a one-subject :class:`MultiwayDataset`."""
    return MultiwayDataset(compute_plv(phase1, phase2)[None], s_axis, t_axis)


def stack_subjects(datasets):
    """Concatenate one-subject datasets on a common grid into one sample."""
    first = datasets[0]
    for d in datasets[1:]:
        if d.s_axis != first.s_axis or d.t_axis != first.t_axis:
            raise ValueError("subjects are on different grids")
    return MultiwayDataset(np.concatenate([d.values for d in datasets]),
                           first.s_axis, first.t_axis)


def save_phase_tensor(path, phases, s_points, t_points):
    phases = np.asarray(phases, dtype=float)
    header = {"magic": "MWFD1", "n": 1, "n_T": int(phases.shape[0]),
              "s_points": list(map(float, s_points)), "t_points": list(map(float, t_points))}
    write_mwfd(path, header, phases)


def load_phase_tensor(path):
    """Read an MWFD1 phase tensor; returns ``(phases, s_axis, t_axis)``."""
    header, flat, _ = read_mwfd(path)
    if "n_T" not in header:
        raise DataFormatError(f"{path}: malformed header (phase tensor needs 'n_T')")
    s_axis = GridAxis(header["s_points"], header.get("s_weights"))
    t_axis = GridAxis(header["t_points"], header.get("t_weights"))
    nT = int(header["n_T"])
    expected = nT * len(s_axis) * len(t_axis)
    if flat.size != expected:
        raise DataFormatError(f"{path}: dimension mismatch (header declares {expected} "
                              f"values, payload has {flat.size})")
    return flat.reshape(nT, len(s_axis), len(t_axis)), s_axis, t_axis
