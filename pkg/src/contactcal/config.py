"""Flat ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Values are kept as strings until a command asks for a typed view, so each
command validates exactly the keys it understands.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import ParseError
from .registration import IcpConfig
from .calibration import CalibrationConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text, path=None) -> dict:
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno, path)
        if key in values:
            raise ParseError(f"duplicate key {key!r} (first on line {lines[key]})", lineno, path)
        values[key] = value
        lines[key] = lineno
    return Settings(values, lines, path)


def read_config(path) -> "Settings":
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", path=path) from exc
    return parse_config_text(text, path)


class Settings(dict):
    """String settings with typed accessors that report the offending line."""

    def __init__(self, values=(), lines=None, path=None):
        super().__init__(values)
        self.lines = dict(lines or {})
        self.path = path

    def _error(self, key, message):
        return ParseError(f"{key}: {message}", self.lines.get(key), self.path)

    def check_known(self, known):
        for key in self:
            if key not in known:
                raise self._error(key, "unknown setting")

    def get_str(self, key, default=None):
        return self.get(key, default)

    def get_float(self, key, default=None):
        if key not in self:
            return default
        try:
            value = float(self[key])
        except ValueError:
            raise self._error(key, f"not a number: {self[key]!r}") from None
        if not math.isfinite(value):
            raise self._error(key, "must be finite")
        return value

    def get_int(self, key, default=None):
        if key not in self:
            return default
        try:
            return int(self[key])
        except ValueError:
            raise self._error(key, f"not an integer: {self[key]!r}") from None

    def get_bool(self, key, default=None):
        if key not in self:
            return default
        v = self[key].lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise self._error(key, f"not a boolean: {self[key]!r}")

    def get_floats(self, key, count=None, default=None):
        if key not in self:
            return default
        parts = self[key].replace(",", " ").split()
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise self._error(key, f"not a list of numbers: {self[key]!r}") from None
        if count is not None and len(values) != count:
            raise self._error(key, f"expected {count} numbers, got {len(values)}")
        return values

    def get_list(self, key, default=None):
        if key not in self:
            return default
        return [p.strip() for p in self[key].split(",") if p.strip()]


ICP_KEYS = ("max_iterations", "translation_tolerance", "rotation_tolerance",
            "max_correspondence_distance", "trim_ratio", "normal_k")

CALIBRATION_KEYS = ICP_KEYS + (
    "solve_biases", "pin_base_bias", "lm_max_iterations", "damping_init",
    "parameter_tolerance", "condition_threshold", "min_eigen_ratio", "max_rejections",
    "initial_extrinsic",
)


def icp_config(settings: Settings, workers=1) -> IcpConfig:
    base = IcpConfig()
    try:
        return IcpConfig(
            max_iterations=settings.get_int("max_iterations", base.max_iterations),
            translation_tolerance=settings.get_float("translation_tolerance", base.translation_tolerance),
            rotation_tolerance=settings.get_float("rotation_tolerance", base.rotation_tolerance),
            max_correspondence_distance=settings.get_float("max_correspondence_distance",
                                                           base.max_correspondence_distance),
            trim_ratio=settings.get_float("trim_ratio", base.trim_ratio),
            normal_k=settings.get_int("normal_k", base.normal_k),
            workers=workers,
        )
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), path=settings.path) from None


def calibration_config(settings: Settings, workers=1) -> CalibrationConfig:
    base = CalibrationConfig()
    return CalibrationConfig(
        damping_init=settings.get_float("damping_init", base.damping_init),
        max_iterations=settings.get_int("lm_max_iterations", base.max_iterations),
        parameter_tolerance=settings.get_float("parameter_tolerance", base.parameter_tolerance),
        max_rejections=settings.get_int("max_rejections", base.max_rejections),
        condition_threshold=settings.get_float("condition_threshold", base.condition_threshold),
        min_eigen_ratio=settings.get_float("min_eigen_ratio", base.min_eigen_ratio),
        pin_base_bias=settings.get_bool("pin_base_bias", base.pin_base_bias),
        icp=icp_config(settings, workers),
    )
