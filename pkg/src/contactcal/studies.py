"""Repeatable experiments built from the library pieces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContactCalError, TargetTooLarge
from .pointcloud import PointCloud, random_downsample
from .registration import IcpConfig, register
from .se3 import RigidTransform, TwistIncrement, apply_increment, transform_error


@dataclass(frozen=True)
class DownsampleRow:
    count: int
    trials: int
    translation_mean: float
    translation_std: float
    rotation_mean: float      # rad
    rotation_std: float
    task_mean: float          # mean displacement of the contact points, m
    task_std: float
    failures: int             # trials whose registration raised or did not converge


def perturb(T: RigidTransform, rng, max_translation, max_rotation) -> RigidTransform:
    """Left-compose a uniform random twist, ``|d_i| <= max`` per axis."""
    d = np.concatenate([rng.uniform(-max_translation, max_translation, 3),
                        rng.uniform(-max_rotation, max_rotation, 3)])
    return apply_increment(T, TwistIncrement.from_vector(d))


def task_space_error(estimate: RigidTransform, truth: RigidTransform, points) -> float:
    """Mean distance between points mapped by the estimate and by the truth."""
    return float(np.mean(np.linalg.norm(estimate.apply(points) - truth.apply(points), axis=1)))


def downsample_study(contact: PointCloud, depth: PointCloud, truth: RigidTransform, counts,
                     trials=20, seed=0, initial: RigidTransform | None = None,
                     cfg: IcpConfig = IcpConfig(), max_translation=0.05,
                     max_rotation=math.radians(5.0)):
    """Rigid registration error against ground truth for random contact subsets.

    Trial ``t`` of every count uses the same seed stream, so rows differ
    only in the number of points kept.  Without ``initial`` each trial
    starts from its own random perturbation of ``truth``.  A failed trial
    contributes the error of its starting guess.  Task-space error is
    measured over the whole contact cloud.
    """
    counts = [int(c) for c in counts]
    for c in counts:
        if c > len(contact):
            raise TargetTooLarge(f"count {c} exceeds the {len(contact)} contact points")
    streams = np.random.SeedSequence(seed).spawn(trials)
    rows = []
    for count in counts:
        t_err, r_err, task, failures = [], [], [], 0
        for child in streams:
            sub_seed, guess_seed = child.generate_state(2)
            start = initial if initial is not None else perturb(
                truth, np.random.default_rng(guess_seed), max_translation, max_rotation)
            sub = contact if count == len(contact) else random_downsample(contact, count, int(sub_seed))
            try:
                res = register(sub, depth, start, cfg)
                T = res.transform
                if not res.converged:
                    failures += 1
            except (ContactCalError, np.linalg.LinAlgError):
                T = start
                failures += 1
            dt, ang = transform_error(T, truth)
            t_err.append(np.linalg.norm(dt))
            r_err.append(ang)
            task.append(task_space_error(T, truth, contact.points))
        rows.append(DownsampleRow(count, trials, float(np.mean(t_err)), float(np.std(t_err)),
                                  float(np.mean(r_err)), float(np.std(r_err)),
                                  float(np.mean(task)), float(np.std(task)), failures))
    return rows
