"""Line-oriented text formats for detections, scans and calibration results.

Every file starts with a one-line schema header; blank lines and lines whose
first non-space character is ``#`` are ignored anywhere. Floats are written in
shortest round-trip form (``repr``), so loading a saved file gives back the
exact same numbers.

Detections::

    stcalib-detections v1 format=plane
    <t> <nx> <ny> <nz> <d>

or ``format=pose`` with rows ``<t> <r00> <r01> ... <r22> <tx> <ty> <tz>``
(marker rotation row-major and translation in the camera frame).

Scans::

    stcalib-scans v1
    cloud t_cloud=<s> model=<vlp16|mrs6124|explicit> f=<Hz> fields=x,y,z,azimuth [phi_s=..] [phi_e=..] [count=N]
    <x> <y> <z> <azimuth>
    ...

Results (also used for ground truth and initial guesses)::

    stcalib-result v1
    rotation <9 values row-major>
    translation <3 values>
    delta_t <s>
    report.<key> <json value>
    config.<key> <json value>
    version <text>
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .calibrator import Calibration
from .errors import FormatError
from .lie_plane import Plane
from .plane_trajectory import PlaneDetection
from .point_timestamps import SCAN_MODELS, RawScan, ScanModel

DETECTIONS_HEADER = "stcalib-detections"
SCANS_HEADER = "stcalib-scans"
RESULT_HEADER = "stcalib-result"
FORMAT_VERSION = "v1"
NORMAL_TOL = 1e-4

# per-point columns each scan model needs
REQUIRED_FIELDS = {
    "vlp16": ("x", "y", "z", "azimuth"),
    "mrs6124": ("x", "y", "z", "azimuth", "group"),
    "explicit": ("x", "y", "z", "t"),
}
KNOWN_FIELDS = ("x", "y", "z", "azimuth", "group", "t")


def _lines(path):
    """(line number, stripped text) for every non-comment, non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text and not text.startswith("#"):
                yield no, text


def _header(lines, path, expected):
    try:
        no, text = next(lines)
    except StopIteration:
        raise FormatError(f"empty file, expected a '{expected}' header", path=path) from None
    tokens = text.split()
    if tokens[0] != expected:
        raise FormatError(f"bad header {tokens[0]!r}, expected {expected!r}", line=no, path=path)
    if len(tokens) < 2 or tokens[1] != FORMAT_VERSION:
        raise FormatError(f"unsupported format version in {text!r}", line=no, path=path)
    return no, tokens[2:]


def _floats(tokens, no, path, what="value"):
    try:
        vals = [float(tok) for tok in tokens]
    except ValueError:
        raise FormatError(f"non-numeric {what} in {' '.join(tokens)!r}", line=no, path=path) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(f"non-finite {what} in {' '.join(tokens)!r}", line=no, path=path)
    return vals


def _row(text, no, path, width):
    tokens = text.split()
    if len(tokens) < width:
        raise FormatError(f"truncated row: expected {width} fields, got {len(tokens)}",
                          line=no, path=path)
    if len(tokens) > width:
        raise FormatError(f"too many fields: expected {width}, got {len(tokens)}",
                          line=no, path=path)
    return _floats(tokens, no, path)


def _key_values(tokens, no, path):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise FormatError(f"expected key=value, got {tok!r}", line=no, path=path)
        out[key] = value
    return out


def _unit_normal(n, no, path):
    norm = math.sqrt(sum(v * v for v in n))
    if abs(norm - 1.0) > NORMAL_TOL:
        raise FormatError(f"plane normal has norm {norm!r}, not unit within {NORMAL_TOL}",
                          line=no, path=path)
    # leave numerically unit normals untouched so saved files load back exactly
    if abs(norm - 1.0) > 4 * np.finfo(float).eps:
        n = [v / norm for v in n]
    return n


def _check_increasing(t, prev, no, path, what):
    if prev is not None and not t > prev:
        raise FormatError(f"non-monotone {what}: {t!r} after {prev!r}", line=no, path=path)


# --------------------------------------------------------------------------
# detections

def load_detections(path) -> List[PlaneDetection]:
    lines = _lines(path)
    no, rest = _header(lines, path, DETECTIONS_HEADER)
    opts = _key_values(rest, no, path)
    fmt = opts.get("format", "plane")
    if fmt not in ("plane", "pose"):
        raise FormatError(f"unknown detections format {fmt!r}", line=no, path=path)
    width = 5 if fmt == "plane" else 13
    out = []
    prev = None
    for no, text in lines:
        vals = _row(text, no, path, width)
        t = vals[0]
        _check_increasing(t, prev, no, path, "detection time")
        prev = t
        if fmt == "plane":
            n, d = vals[1:4], vals[4]
        else:
            rot = np.array(vals[1:10]).reshape(3, 3)
            trans = np.array(vals[10:13])
            n = _unit_normal([float(v) for v in rot[:, 2]], no, path)
            d = -float(np.dot(n, trans))
        n = _unit_normal(n, no, path)
        out.append(PlaneDetection(t, Plane(np.array(n), d)))
    return out


def save_detections(path, detections: Sequence[PlaneDetection]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{DETECTIONS_HEADER} {FORMAT_VERSION} format=plane\n")
        fh.write("# t nx ny nz d\n")
        for det in detections:
            vals = [det.t, *det.plane.n, det.plane.d]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def save_pose_detections(path, times, rotations, translations) -> None:
    """Detections as marker poses; loading converts them to planes."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{DETECTIONS_HEADER} {FORMAT_VERSION} format=pose\n")
        fh.write("# t r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n")
        for t, rot, trans in zip(times, rotations, translations):
            vals = [float(t)] + [float(v) for v in np.ravel(rot)] + [float(v) for v in trans]
            fh.write(" ".join(repr(v) for v in vals) + "\n")


# --------------------------------------------------------------------------
# scans

@dataclass
class ScanRecord:
    """One cloud as stored on disk: scanner model, cloud time and raw points."""

    t_cloud: float
    model: ScanModel
    points: RawScan

    @property
    def fields(self) -> tuple:
        present = ["x", "y", "z"]
        for name in ("azimuth", "group", "t"):
            if getattr(self.points, name) is not None:
                present.append(name)
        return tuple(present)


def _parse_cloud_header(tokens, no, path):
    kv = _key_values(tokens, no, path)
    for key in ("t_cloud", "model", "fields"):
        if key not in kv:
            raise FormatError(f"cloud header lacks '{key}='", line=no, path=path)
    model = kv["model"]
    if model not in SCAN_MODELS:
        raise FormatError(f"unknown scan model tag {model!r}; expected one of {SCAN_MODELS}",
                          line=no, path=path)
    fields = tuple(kv["fields"].split(","))
    unknown = [f for f in fields if f not in KNOWN_FIELDS]
    if unknown or len(set(fields)) != len(fields):
        raise FormatError(f"bad field list {kv['fields']!r}", line=no, path=path)
    missing = [f for f in REQUIRED_FIELDS[model] if f not in fields]
    if missing:
        raise FormatError(f"model {model} needs per-point field(s) {','.join(missing)}",
                          line=no, path=path)
    t_cloud = _floats([kv["t_cloud"]], no, path, "t_cloud")[0]
    f = None
    if model != "explicit":
        if "f" not in kv:
            raise FormatError(f"model {model} needs a scan frequency 'f='", line=no, path=path)
        f = _floats([kv["f"]], no, path, "frequency")[0]
        if not f > 0:
            raise FormatError(f"scan frequency must be positive, got {f!r}", line=no, path=path)
    phi_s = _floats([kv["phi_s"]], no, path, "phi_s")[0] if "phi_s" in kv else None
    phi_e = _floats([kv["phi_e"]], no, path, "phi_e")[0] if "phi_e" in kv else None
    count = None
    if "count" in kv:
        try:
            count = int(kv["count"])
        except ValueError:
            raise FormatError(f"bad point count {kv['count']!r}", line=no, path=path) from None
    return t_cloud, ScanModel(model, f, phi_s, phi_e), fields, count


def _finish_cloud(header, rows, path):
    t_cloud, model, fields, count, no = header
    if count is not None and count != len(rows):
        raise FormatError(f"cloud declares count={count} but has {len(rows)} point rows",
                          line=no, path=path)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(fields))
    cols = {name: arr[:, i] for i, name in enumerate(fields)}
    xyz = np.column_stack([cols["x"], cols["y"], cols["z"]])
    group = cols.get("group")
    if group is not None:
        if not np.all(group == np.round(group)):
            raise FormatError("scanning group values must be integers", line=no, path=path)
        group = group.astype(np.int64)
    raw = RawScan(xyz, cols.get("azimuth"), group, cols.get("t"))
    return ScanRecord(t_cloud, model, raw)


def load_scans(path) -> List[ScanRecord]:
    lines = _lines(path)
    _header(lines, path, SCANS_HEADER)
    out = []
    header = None
    rows: list = []
    prev_t = None
    for no, text in lines:
        tokens = text.split()
        if tokens[0] == "cloud":
            if header is not None:
                out.append(_finish_cloud(header, rows, path))
            t_cloud, model, fields, count = _parse_cloud_header(tokens[1:], no, path)
            _check_increasing(t_cloud, prev_t, no, path, "cloud time")
            prev_t = t_cloud
            header = (t_cloud, model, fields, count, no)
            rows = []
            continue
        if header is None:
            raise FormatError("point row before the first 'cloud' header", line=no, path=path)
        rows.append(_row(text, no, path, len(header[2])))
    if header is not None:
        out.append(_finish_cloud(header, rows, path))
    return out


def save_scans(path, records: Sequence[ScanRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{SCANS_HEADER} {FORMAT_VERSION}\n")
        for rec in records:
            fields = rec.fields
            m = rec.model
            head = [f"t_cloud={float(rec.t_cloud)!r}", f"model={m.kind}"]
            if m.f is not None:
                head.append(f"f={float(m.f)!r}")
            head.append("fields=" + ",".join(fields))
            if m.phi_s is not None:
                head.append(f"phi_s={float(m.phi_s)!r}")
            if m.phi_e is not None:
                head.append(f"phi_e={float(m.phi_e)!r}")
            n = len(rec.points.xyz)
            head.append(f"count={n}")
            fh.write("cloud " + " ".join(head) + "\n")
            cols = [rec.points.xyz[:, 0], rec.points.xyz[:, 1], rec.points.xyz[:, 2]]
            for name in fields[3:]:
                cols.append(getattr(rec.points, name))
            for i in range(n):
                fh.write(" ".join(
                    str(int(c[i])) if name == "group" else repr(float(c[i]))
                    for name, c in zip(fields, cols)) + "\n")


# --------------------------------------------------------------------------
# results

@dataclass
class ResultFile:
    calibration: Calibration
    report: Dict[str, object] = field(default_factory=dict)
    config: Dict[str, object] = field(default_factory=dict)
    version: Optional[str] = None


def save_result(path, result: ResultFile) -> None:
    cal = result.calibration
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{RESULT_HEADER} {FORMAT_VERSION}\n")
        fh.write("rotation " + " ".join(repr(float(v)) for v in cal.rotation.ravel()) + "\n")
        fh.write("translation " + " ".join(repr(float(v)) for v in cal.translation) + "\n")
        fh.write(f"delta_t {float(cal.delta_t)!r}\n")
        for prefix, table in (("report", result.report), ("config", result.config)):
            for key, value in table.items():
                if any(ch.isspace() for ch in key):
                    raise ValueError(f"{prefix} key {key!r} contains whitespace")
                fh.write(f"{prefix}.{key} {json.dumps(value)}\n")
        if result.version is not None:
            fh.write(f"version {result.version}\n")


def load_result(path) -> ResultFile:
    lines = _lines(path)
    _header(lines, path, RESULT_HEADER)
    rot = trans = delta_t = None
    report: Dict[str, object] = {}
    config: Dict[str, object] = {}
    version = None
    for no, text in lines:
        key, _, value = text.partition(" ")
        value = value.strip()
        if key == "rotation":
            rot = np.array(_row(value, no, path, 9)).reshape(3, 3)
        elif key == "translation":
            trans = np.array(_row(value, no, path, 3))
        elif key == "delta_t":
            delta_t = _row(value, no, path, 1)[0]
        elif key == "version":
            version = value
        elif key.startswith(("report.", "config.")):
            try:
                parsed = json.loads(value)
            except json.JSONDecodeError:
                raise FormatError(f"bad value for {key}: {value!r}", line=no, path=path) from None
            prefix, _, name = key.partition(".")
            (report if prefix == "report" else config)[name] = parsed
        else:
            raise FormatError(f"unknown result key {key!r}", line=no, path=path)
    for name, val in (("rotation", rot), ("translation", trans), ("delta_t", delta_t)):
        if val is None:
            raise FormatError(f"result file lacks '{name}'", path=path)
    try:
        cal = Calibration(rot, trans, delta_t)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None
    return ResultFile(cal, report, config, version)
