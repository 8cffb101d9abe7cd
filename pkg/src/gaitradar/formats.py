"""File formats: measurements, gray images, CSV tables, INI configs, manifests."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path

import numpy as np

from .features import FEATURE_NAMES
from .model import FeatureTable
from .sim import CohortSpec, Direction, IqSignal, Label, Measurement, SubjectSpec

MAGIC = b"MDGS"
VERSION = 1
_HEADER = struct.Struct("<4sIdQBB")
_LEN = struct.Struct("<I")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# --- atomic writes ---------------------------------------------------------------


@contextmanager
def atomic_open(path, mode="w", **kwargs):
    """Write to a temp file next to ``path`` and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- measurement files ------------------------------------------------------------


def encode_measurement(m: Measurement) -> bytes:
    sid = m.subject_id.encode("utf-8")
    x = m.signal.samples
    header = _HEADER.pack(MAGIC, VERSION, float(m.signal.fs), x.size, m.direction.code, m.label.code)
    body = np.empty(2 * x.size, dtype="<f8")
    body[0::2] = x.real
    body[1::2] = x.imag
    return header + _LEN.pack(len(sid)) + sid + body.tobytes()


def write_measurement(path, m: Measurement) -> Path:
    path = Path(path)
    with atomic_open(path, "wb") as fh:
        fh.write(encode_measurement(m))
    return path


def decode_measurement(data: bytes, seed: int = -1) -> Measurement:
    if len(data) < _HEADER.size + _LEN.size:
        raise FormatError("truncated header")
    magic, version, fs, n, dcode, lcode = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dcode not in (0, 1) or lcode not in (0, 1):
        raise FormatError("bad direction or label code")
    off = _HEADER.size
    (slen,) = _LEN.unpack_from(data, off)
    off += _LEN.size
    if len(data) < off + slen:
        raise FormatError("truncated subject id")
    try:
        sid = data[off:off + slen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("subject id is not UTF-8") from exc
    off += slen
    if len(data) != off + 16 * n:
        raise FormatError(f"expected {n} samples, file holds {(len(data) - off) / 16:g}")
    body = np.frombuffer(data, dtype="<f8", offset=off, count=2 * n)
    samples = body[0::2] + 1j * body[1::2]
    if not math.isfinite(fs) or fs <= 0:
        raise FormatError("bad sampling frequency")
    try:
        sig = IqSignal(samples, fs)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return Measurement(sig, Label.from_code(lcode), sid, Direction.from_code(dcode), seed)


def read_measurement(path, seed: int = -1) -> Measurement:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode_measurement(data, seed)


# --- dataset manifest -----------------------------------------------------------

MANIFEST_COLUMNS = ("path", "subject", "direction", "label", "seed")


def write_dataset_manifest(path, rows) -> Path:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in MANIFEST_COLUMNS])
    return Path(path)


def read_dataset_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    for r in rows:
        if set(MANIFEST_COLUMNS) - set(r):
            raise FormatError(f"{path}: missing manifest columns")
        r["path"] = str((path.parent / r["path"]).resolve()) if not os.path.isabs(r["path"]) else r["path"]
        r["seed"] = int(r["seed"])
    return rows


# --- gray images ------------------------------------------------------------------


def write_pgm(path, pixels) -> Path:
    """Binary PGM (P5), 8 bit; pixels in [0, 1], row 0 at the top."""
    img = np.asarray(pixels, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    data = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    with atomic_open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    return Path(path)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos + 1, count=w * h).reshape(h, w)
    return data.astype(float) / maxval


def write_matrix_csv(path, values, row_axis, col_axis, row_name="time_s", col_name="doppler_hz") -> Path:
    """Matrix with two header rows: the column axis values, then one row per entry."""
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{row_name}\\{col_name}"] + [repr(float(c)) for c in col_axis])
        for r, row in zip(row_axis, np.asarray(values)):
            w.writerow([repr(float(r))] + [repr(float(v)) for v in row])
    return Path(path)


# --- feature tables ---------------------------------------------------------------

FEATURE_COLUMNS = ("measurement", "subject", "direction", "label") + FEATURE_NAMES + ("flags",)


def format_feature_row(meta: dict, values, flags) -> list[str]:
    vals = ["" if not np.isfinite(v) else repr(float(v)) for v in values]
    return [meta.get("measurement", ""), meta["subject"], meta["direction"], meta["label"]] + vals + [
        ";".join(flags)]


def write_feature_table(path, rows) -> Path:
    """``rows``: iterables already formatted by :func:`format_feature_row`."""
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_COLUMNS)
        for r in rows:
            w.writerow(r)
    return Path(path)


def read_feature_table(path) -> FeatureTable:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if rows and set(FEATURE_COLUMNS) - set(rows[0]):
        raise FormatError(f"{path}: missing feature columns")
    label_codes = {"symmetric": 0, "asymmetric": 1, "0": 0, "1": 1}
    x = np.array([[float(r[n]) if r[n] != "" else math.nan for n in FEATURE_NAMES] for r in rows],
                 dtype=float).reshape(len(rows), len(FEATURE_NAMES))
    try:
        labels = [label_codes[r["label"]] for r in rows]
    except KeyError as exc:
        raise FormatError(f"unknown label {exc}") from exc
    return FeatureTable([r["subject"] for r in rows], [r["direction"] for r in rows], labels, x,
                        [r["flags"] for r in rows], FEATURE_NAMES, [r["measurement"] for r in rows])


# --- INI configs ------------------------------------------------------------------


def _coerce(value: str, kind):
    if kind is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is Label:
        return Label(value.strip())
    return kind(value)


_COHORT_TYPES = {"master_seed": int}
_SUBJECT_TYPES = {"label": Label, "knee_mode": bool, "simulated_limp": bool, "limp_knee_mode": bool,
                  "n_toward": int, "n_away": int}


def parse_cohort(text: str) -> CohortSpec:
    """Cohort INI: a ``[cohort]`` section and one ``[subject:<id>]`` section per person."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"cohort config: {exc}") from exc
    cohort_fields = {f.name for f in fields(CohortSpec)} - {"subjects"}
    subject_fields = {f.name for f in fields(SubjectSpec)} - {"subject_id"}
    kwargs = {}
    subjects = []
    ids = []
    for section in cp.sections():
        if section == "cohort":
            for k, v in cp[section].items():
                if k not in cohort_fields:
                    raise ValueError(f"cohort config: unknown key {k!r} in [cohort]")
                kwargs[k] = _coerce(v, _COHORT_TYPES.get(k, float))
        elif section.startswith("subject:"):
            sid = section.split(":", 1)[1].strip()
            if not sid:
                raise ValueError("cohort config: empty subject id")
            ids.append(sid)
            sk = {}
            for k, v in cp[section].items():
                if k not in subject_fields:
                    raise ValueError(f"cohort config: unknown key {k!r} in [{section}]")
                sk[k] = _coerce(v, _SUBJECT_TYPES.get(k, float))
            subjects.append(SubjectSpec(subject_id=sid, **sk))
        else:
            raise ValueError(f"cohort config: unknown section [{section}]")
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ValueError(f"duplicate subject ids: {sorted(dup)}")
    return CohortSpec(subjects=tuple(subjects), **kwargs)


def format_cohort(cohort: CohortSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["cohort"] = {f.name: _fmt(getattr(cohort, f.name)) for f in fields(CohortSpec) if f.name != "subjects"}
    for s in cohort.subjects:
        cp[f"subject:{s.subject_id}"] = {
            f.name: _fmt(getattr(s, f.name)) for f in fields(SubjectSpec) if f.name != "subject_id"}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, Label):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_json(path, obj) -> Path:
    with atomic_open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return Path(path)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Direction, Label)):
        return o.value
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
