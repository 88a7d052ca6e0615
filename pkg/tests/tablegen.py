"""Synthetic feature tables with planted structure, shared across tests.

These builders skip audio entirely and construct FeatureTable objects
directly, so tests of the table-level analyses stay fast and their
expected outcomes follow from the planted geometry instead of from a
rendering pipeline.
"""

import numpy as np

from vibroaudit.dataset import FeatureTable


def assemble_table(matrix, session_id, subject, health, side, device, names=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    if names is None:
        names = [f"f{j:02d}" for j in range(matrix.shape[1])]
    labels = {
        "session_id": np.array(session_id, dtype=object),
        "subject": np.array(subject, dtype=object),
        "health": np.array(health, dtype=object),
        "side": np.array(side, dtype=object),
        "device": np.array(device, dtype=object),
    }
    return FeatureTable(
        feature_names=list(names),
        matrix=matrix,
        labels=labels,
        repetition_index=np.arange(matrix.shape[0], dtype=np.int64),
    )


def rotated_pair_table(
    n_subjects=16,
    reps=10,
    phi_deg=10.0,
    c=2.0,
    noise=0.12,
    subject_sigma=0.04,
    seed=0,
):
    """Two-feature Gaussian world whose side subgroups differ by a rotation.

    Every subject contributes one Unhealthy and one Healthy leg (the
    operated side alternates), so every leave-one-subject-out fold stays
    class-balanced.  Each side's rows sit in two blobs at +/- c along
    that side's axis; the axes sit symmetrically about 45 degrees and
    differ by exactly phi_deg, so standardization preserves the angle.
    Within either blob the classes are offset by c * (u_left - u_right):
    the class separation IS the inter-axis rotation, and aligning the
    axes removes it.
    """
    rng = np.random.default_rng(seed)
    half = np.radians(phi_deg) / 2.0
    base = np.radians(45.0)
    axis = {
        "left": np.array([np.cos(base + half), np.sin(base + half)]),
        "right": np.array([np.cos(base - half), np.sin(base - half)]),
    }
    rows, sess, subj, health, side_col, dev = [], [], [], [], [], []
    for s in range(n_subjects):
        unhealthy_side = "left" if s % 2 == 0 else "right"
        offset = rng.normal(0.0, subject_sigma, size=2)
        for side in ("left", "right"):
            label = "Unhealthy" if side == unhealthy_side else "Healthy"
            sign = (1.0 if label == "Unhealthy" else -1.0) * (
                1.0 if side == "left" else -1.0
            )
            pts = sign * c * axis[side] + offset + rng.normal(0.0, noise, (reps, 2))
            rows.append(pts)
            sess += [f"subj{s:03d}-{side}"] * reps
            subj += [f"subj{s:03d}"] * reps
            health += [label] * reps
            side_col += [side] * reps
            dev += ["DL" if side == "left" else "DR"] * reps
    return assemble_table(np.vstack(rows), sess, subj, health, side_col, dev)


def device_shortcut_table(n_subjects=12, reps=6, effect=1.2, tilt=1.0, noise=0.3, seed=0):
    """Complementary-legs table where only the right device sees the label.

    f00 separates the classes only on DR rows, so the DL stratum scores
    at chance while the full table scores well above it; f01 carries a
    pure device offset, so the device itself is predictable.
    """
    rng = np.random.default_rng(seed)
    rows, sess, subj, health, side_col, dev = [], [], [], [], [], []
    for s in range(n_subjects):
        unhealthy_side = "left" if s % 2 == 0 else "right"
        for side, device in (("left", "DL"), ("right", "DR")):
            label = "Unhealthy" if side == unhealthy_side else "Healthy"
            f0 = effect * float(label == "Unhealthy") * float(device == "DR")
            f1 = tilt if device == "DR" else -tilt
            pts = np.column_stack(
                [
                    f0 + rng.normal(0.0, noise, reps),
                    f1 + rng.normal(0.0, noise, reps),
                ]
            )
            rows.append(pts)
            sess += [f"subj{s:03d}-{side}"] * reps
            subj += [f"subj{s:03d}"] * reps
            health += [label] * reps
            side_col += [side] * reps
            dev += [device] * reps
    return assemble_table(np.vstack(rows), sess, subj, health, side_col, dev)


def uniform_signal_table(n_subjects=10, reps=5, effect=2.0, noise=0.2, seed=0):
    """Complementary-legs table whose class signal ignores the device.

    f00 separates the classes by 2 * effect on every row, far beyond the
    noise, so the full table, both device strata, and any control
    subsample all score 1.0 and no conditioning flag can fire.
    """
    rng = np.random.default_rng(seed)
    rows, sess, subj, health, side_col, dev = [], [], [], [], [], []
    for s in range(n_subjects):
        unhealthy_side = "left" if s % 2 == 0 else "right"
        for side, device in (("left", "DL"), ("right", "DR")):
            label = "Unhealthy" if side == unhealthy_side else "Healthy"
            f0 = effect if label == "Unhealthy" else -effect
            pts = np.column_stack(
                [
                    f0 + rng.normal(0.0, noise, reps),
                    rng.normal(0.0, noise, reps),
                ]
            )
            rows.append(pts)
            sess += [f"subj{s:03d}-{side}"] * reps
            subj += [f"subj{s:03d}"] * reps
            health += [label] * reps
            side_col += [side] * reps
            dev += [device] * reps
    return assemble_table(np.vstack(rows), sess, subj, health, side_col, dev)


def day_level_table(n_days=5, rows_per_day=8, step=1.0, noise=0.25, seed=0):
    """One physical subject recorded over days with a drifting level.

    The only structure is a per-day offset in f00.  Plain LOSO is
    impossible (one subject); the table exists to be relabeled with
    days as counterfactual subjects.
    """
    rng = np.random.default_rng(seed)
    rows, sess = [], []
    for d in range(n_days):
        rows.append(d * step + rng.normal(0.0, noise, (rows_per_day, 1)))
        sess += [f"day{d}"] * rows_per_day
    n = n_days * rows_per_day
    return assemble_table(
        np.vstack(rows),
        sess,
        ["subj000"] * n,
        ["Healthy"] * n,
        ["left"] * n,
        ["D0"] * n,
    )
