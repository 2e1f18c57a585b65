"""Text and CSV reports plus the run manifest."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import GimbalLock
from .se3 import EULER_CONVENTION, transform_to_extrinsic
from .stability import StabilityReport


def _num(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.17g}"


def _nums(values):
    return " ".join(_num(float(v)) for v in values)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def stability_lines(raw: StabilityReport, centered: StabilityReport | None = None):
    lines = [
        f"eigenvalues {_nums(raw.eigenvalues)}",
        f"condition_number {_num(raw.condition_number)}",
    ]
    if centered is not None:
        lines += [
            f"eigenvalues_centered {_nums(centered.eigenvalues)}",
            f"condition_number_centered {_num(centered.condition_number)}",
        ]
    lines.append(f"rank {raw.numeric_rank}")
    for vec, label in raw.null_directions:
        lines.append(f"null_direction {label} : {_nums(vec)}")
    return lines


def registration_report(result, raw: StabilityReport, centered: StabilityReport | None = None) -> str:
    try:
        ext = transform_to_extrinsic(result.transform).to_line()
    except GimbalLock:
        ext = "undefined (pitch at +-90 degrees)"
    lines = [
        "# rigid registration",
        f"extrinsic {ext}",
        f"transform {result.transform.to_line()}",
        f"cost {_num(result.final_cost)}",
        f"iterations {result.iterations}",
        f"converged {'true' if result.converged else 'false'}",
        f"correspondences {result.correspondences_used}",
    ]
    lines += stability_lines(raw, centered)
    lines += [
        f"# euler convention: {EULER_CONVENTION}",
        "# hessian sums weight-1 pairs only; metres and radians are not rebalanced",
    ]
    return "\n".join(lines) + "\n"


def calibration_report(result) -> str:
    b = np.asarray(result.joint_biases)
    lines = [
        "# joint extrinsic and bias calibration",
        f"extrinsic {result.extrinsic.to_line()}",
        f"transform {result.transform.to_line()}",
        f"biases_rad {_nums(b)}",
        f"biases_deg {_nums(np.degrees(b))}",
        f"cost {_num(result.final_cost)}",
        f"iterations {result.iterations}",
        f"converged {'true' if result.converged else 'false'}",
        f"rigid_only {'true' if result.rigid_only else 'false'}",
    ]
    if result.spectrum is not None:
        s = result.spectrum
        lines.append(f"determinant {_num(s.determinant)}")
        lines.append(f"condition_number {_num(s.condition_number)}")
        lines.append("# parameter eigenvalue dominant")
        for lam, vec in zip(s.eigenvalues, s.eigenvectors):
            j = int(np.argmax(np.abs(vec)))
            lines.append(f"spectrum {_num(float(lam))} {s.names[j]}")
    lines.append(result.verdict)
    return "\n".join(lines) + "\n"


def cost_history_csv(history) -> str:
    rows = ["iteration,cost"] + [f"{i},{_num(float(c))}" for i, c in enumerate(history)]
    return "\n".join(rows) + "\n"


def spectrum_csv(report: StabilityReport) -> str:
    head = "index,eigenvalue," + ",".join(report.names)
    rows = [head]
    for i, (lam, vec) in enumerate(zip(report.eigenvalues, report.eigenvectors)):
        rows.append(f"{i},{_num(float(lam))}," + ",".join(_num(float(v)) for v in vec))
    return "\n".join(rows) + "\n"


def sampling_csv(rows) -> str:
    out = ["mask,n_points,rank," + ",".join(f"lambda_{i}" for i in range(1, 7)) + ",condition_number"]
    for r in rows:
        out.append(f"{r.label},{r.n_points},{r.rank}," + ",".join(_num(float(v)) for v in r.eigenvalues)
                   + f",{_num(r.condition_number)}")
    return "\n".join(out) + "\n"


def downsample_csv(rows) -> str:
    out = ["count,trials,translation_mean_m,translation_std_m,rotation_mean_rad,rotation_std_rad,"
           "task_mean_m,task_std_m,failures"]
    for r in rows:
        out.append(",".join([str(r.count), str(r.trials)] + [_num(v) for v in (
            r.translation_mean, r.translation_std, r.rotation_mean, r.rotation_std,
            r.task_mean, r.task_std)] + [str(r.failures)]))
    return "\n".join(out) + "\n"


def write_text(path, text):
    _atomic_write(path, text)


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    inputs: dict
    output_dir: str
    seed: int | None
    version: str
    metrics: dict = field(default_factory=dict)

    def write(self, path):
        _atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))
