"""Per-point acquisition times for rotating 3D laser scanners.

Two scanner models are supported from azimuth geometry alone:

* ``vlp16``: one sweep per cloud, time grows linearly from the lowest to the
  highest azimuth present in the cloud.
* ``mrs6124``: four scanning groups fired one after another within the cloud
  period; each group contributes a quarter period plus its own azimuth term.

``explicit`` clouds already carry per-point times and pass through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, FormatError

MRS6124_PHI_START = math.pi / 3
SCAN_MODELS = ("vlp16", "mrs6124", "explicit")


class TimedPoints(NamedTuple):
    """Struct-of-arrays point set: ``xyz`` (N, 3) in meters, ``t`` (N,) in seconds."""

    xyz: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)

    def take(self, idx) -> "TimedPoints":
        return TimedPoints(self.xyz[idx], self.t[idx])

    @staticmethod
    def concat(parts) -> "TimedPoints":
        parts = list(parts)
        if not parts:
            return TimedPoints(np.zeros((0, 3)), np.zeros(0))
        return TimedPoints(np.concatenate([p.xyz for p in parts]),
                           np.concatenate([p.t for p in parts]))


@dataclass(frozen=True)
class ScanModel:
    kind: str
    f: Optional[float] = None
    phi_s: Optional[float] = None
    phi_e: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCAN_MODELS:
            raise ValueError(f"unknown scan model {self.kind!r}")
        if self.kind != "explicit" and not (self.f is not None and self.f > 0):
            raise ValueError(f"{self.kind} needs a positive scan frequency, got {self.f!r}")

    @classmethod
    def vlp16(cls, f=10.0, phi_s=None, phi_e=None):
        """Velodyne-style sweep. Pass ``phi_s``/``phi_e`` to fix the sweep
        range instead of reading it from the azimuths present."""
        return cls("vlp16", f, phi_s, phi_e)

    @classmethod
    def mrs6124(cls, f=10.0, phi_s=MRS6124_PHI_START):
        return cls("mrs6124", f, phi_s)

    @classmethod
    def explicit(cls):
        return cls("explicit")


class RawScan(NamedTuple):
    xyz: np.ndarray
    azimuth: Optional[np.ndarray] = None
    group: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None


def timestamp_vlp16(t_cloud, f, phi_s, phi_e, phi_i):
    if not phi_s < phi_e:
        raise DomainError(f"need phi_s < phi_e, got {phi_s!r} >= {phi_e!r}")
    phi_i = np.asarray(phi_i, dtype=float)
    if np.any(phi_i < phi_s) or np.any(phi_i > phi_e):
        raise DomainError(f"azimuth outside [{phi_s!r}, {phi_e!r}]")
    out = t_cloud + (phi_i - phi_s) / (f * (phi_e - phi_s))
    return float(out) if out.ndim == 0 else out


def timestamp_mrs6124(t_cloud, f, g, phi_s, phi_i):
    g = np.asarray(g)
    if np.any((g != 0) & (g != 1) & (g != 2) & (g != 3)):
        raise DomainError(f"scanning group must be 0, 1, 2 or 3, got {g!r}")
    phi_i = np.asarray(phi_i, dtype=float)
    if np.any(phi_i < phi_s):
        raise DomainError(f"azimuth below start angle {phi_s!r}")
    out = t_cloud + (g / 4.0 + (phi_i - phi_s) / (2.0 * math.pi)) / f
    return float(out) if out.ndim == 0 else out


def unwrap_sweep(azimuth):
    """Shift azimuths that wrapped past 2*pi so the sweep is contiguous.

    The sweep is assumed to start right after the widest angular gap; if the
    widest gap is the one across the 0/2*pi seam nothing changes.
    """
    az = np.mod(np.asarray(azimuth, dtype=float), 2.0 * math.pi)
    if len(az) < 2:
        return az
    s = np.sort(az)
    gaps = np.diff(s)
    seam = 2.0 * math.pi - (s[-1] - s[0])
    j = int(np.argmax(gaps))
    if gaps[j] <= seam:
        return az
    start = s[j + 1]
    return np.where(az < start, az + 2.0 * math.pi, az)


def assign_timestamps(points: RawScan, model: ScanModel, t_cloud: float) -> TimedPoints:
    xyz = np.asarray(points.xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)

    def need(field):
        value = getattr(points, field)
        if value is None or len(value) != n:
            raise FormatError(f"{model.kind} clouds need a per-point '{field}' field")
        return np.asarray(value)

    if model.kind == "explicit":
        return TimedPoints(xyz, need("t").astype(float))
    if n == 0:
        return TimedPoints(xyz, np.zeros(0))

    az = need("azimuth").astype(float)
    if model.kind == "vlp16":
        if model.phi_s is not None and model.phi_e is not None:
            phi_s, phi_e = model.phi_s, model.phi_e
        else:
            az = unwrap_sweep(az)
            phi_s, phi_e = float(az.min()), float(az.max())
        if phi_e == phi_s:
            return TimedPoints(xyz, np.full(n, float(t_cloud)))
        return TimedPoints(xyz, np.atleast_1d(timestamp_vlp16(t_cloud, model.f, phi_s, phi_e, az)))

    group = need("group")
    phi_s = MRS6124_PHI_START if model.phi_s is None else model.phi_s
    return TimedPoints(xyz, np.atleast_1d(timestamp_mrs6124(t_cloud, model.f, group, phi_s, az)))
