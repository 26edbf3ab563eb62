"""File formats: header + raw volumes, CSV curve tables, map grids, PGM images
and JSON run configurations.

Volume files are a text header (``*.hdr``) next to a raw body (``*.raw``) of
little-endian float32 values, voxel-major (C order over x, y, z) with the
b-values varying fastest.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import lsq
from .globopt import DeConfig
from .model import AcquisitionScheme, NoiseSpec, ParamBounds, PARAM_NAMES
from .pipeline import METHODS, FitConfig, VoxelVolume

HEADER_MAGIC = "ivimfit-volume 1"


class FormatError(ValueError):
    """Malformed input file or configuration."""


def write_atomic(path, data):
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x):
    """Round-trippable, platform-independent float text."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


# --------------------------------------------------------------------------
# volumes


def volume_to_bytes(volume):
    """Return ``(header_text, body_bytes)`` for ``volume``."""
    nx, ny, nz = volume.dims
    header = "\n".join([
        HEADER_MAGIC,
        f"dims {nx} {ny} {nz}",
        f"n_bvalues {len(volume.scheme)}",
        "bvalues " + " ".join(fmt(b) for b in volume.scheme.bvalues),
        "dtype float32",
        "endian little",
        "",
    ])
    body = volume.data.reshape(-1, len(volume.scheme)).astype("<f4").tobytes()
    return header, body


def write_volume(stem, volume):
    header, body = volume_to_bytes(volume)
    stem = Path(stem)
    write_atomic(stem.with_suffix(".raw"), body)
    write_atomic(stem.with_suffix(".hdr"), header)


def read_volume(path):
    """Read a volume from its ``.hdr`` (or ``.raw``) path."""
    path = Path(path)
    hdr = path.with_suffix(".hdr")
    raw = path.with_suffix(".raw")
    try:
        lines = hdr.read_text().splitlines()
    except OSError as err:
        raise FormatError(f"cannot read header {hdr}: {err}") from err
    if not lines or lines[0].strip() != HEADER_MAGIC:
        raise FormatError(f"{hdr}: missing '{HEADER_MAGIC}' header line")
    meta = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        meta[key] = value.split()
    for key in ("dims", "n_bvalues", "bvalues", "dtype", "endian"):
        if key not in meta:
            raise FormatError(f"{hdr}: missing field '{key}'")
    unknown = set(meta) - {"dims", "n_bvalues", "bvalues", "dtype", "endian"}
    if unknown:
        raise FormatError(f"{hdr}: unknown field '{sorted(unknown)[0]}'")
    if meta["dtype"] != ["float32"] or meta["endian"] != ["little"]:
        raise FormatError(f"{hdr}: only little-endian float32 bodies are supported")
    try:
        dims = tuple(int(v) for v in meta["dims"])
        nb = int(meta["n_bvalues"][0])
        bvals = np.array([float(v) for v in meta["bvalues"]])
    except (ValueError, IndexError) as err:
        raise FormatError(f"{hdr}: malformed numeric field ({err})") from err
    if len(dims) != 3 or min(dims) < 0:
        raise FormatError(f"{hdr}: field 'dims' needs three non-negative integers")
    if bvals.size != nb:
        raise FormatError(f"{hdr}: field 'bvalues' has {bvals.size} entries, n_bvalues says {nb}")
    try:
        scheme = AcquisitionScheme(bvals)
    except ValueError as err:
        raise FormatError(f"{hdr}: field 'bvalues': {err}") from err
    try:
        body = raw.read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read body {raw}: {err}") from err
    expected = int(np.prod(dims)) * nb * 4
    if len(body) != expected:
        raise FormatError(f"{raw}: body has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").astype(float).reshape(*dims, nb)
    return VoxelVolume(data, scheme)


# --------------------------------------------------------------------------
# curve tables


def curves_to_csv(bvalues, signals):
    """CSV text with header ``bvalue,signal`` or ``bvalue,s_1,...,s_k``."""
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = signals.shape[0]
    w.writerow(["bvalue"] + (["signal"] if k == 1 else [f"s_{i + 1}" for i in range(k)]))
    for j, b in enumerate(bvalues):
        w.writerow([fmt(b)] + [fmt(v) for v in signals[:, j]])
    return buf.getvalue()


def read_curve_table(path):
    """Parse a curve table into a ``(k, 1, 1, n_b)`` volume."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise FormatError(f"cannot read {path}: {err}") from err
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise FormatError(f"{path}: empty table")
    head = [h.strip() for h in rows[0]]
    if len(head) < 2 or head[0] != "bvalue":
        raise FormatError(f"{path}: header must start with 'bvalue'")
    if len(head) == 2 and head[1] != "signal" and head[1] != "s_1":
        raise FormatError(f"{path}: second column must be 'signal'")
    if len(head) > 2 and head[1:] != [f"s_{i + 1}" for i in range(len(head) - 1)]:
        raise FormatError(f"{path}: curve columns must be s_1..s_k")
    values = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(head):
            raise FormatError(f"{path}: line {n} has {len(row)} columns, expected {len(head)}")
        try:
            values.append([float(v) for v in row])
        except ValueError as err:
            raise FormatError(f"{path}: line {n}: {err}") from err
    arr = np.array(values, dtype=float).reshape(-1, len(head))
    try:
        scheme = AcquisitionScheme(arr[:, 0])
    except ValueError as err:
        raise FormatError(f"{path}: column 'bvalue': {err}") from err
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite signal values")
    signals = arr[:, 1:].T
    return VoxelVolume(signals.reshape(signals.shape[0], 1, 1, -1), scheme)


def read_input(path):
    """Volume from ``.hdr``/``.raw`` or curve table from ``.csv``."""
    path = Path(path)
    if path.suffix in (".hdr", ".raw"):
        return read_volume(path)
    if path.suffix == ".csv":
        return read_curve_table(path)
    raise FormatError(f"{path}: unsupported input type (expected .hdr, .raw or .csv)")


# --------------------------------------------------------------------------
# maps


def map_to_csv(grid, integer=False):
    """Grid as CSV rows ``x,y,z,value`` in C order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "z", "value"])
    for (x, y, z), v in np.ndenumerate(grid):
        w.writerow([x, y, z, str(int(v)) if integer else fmt(v)])
    return buf.getvalue()


def read_map_csv(path, dims=None):
    """Grid written by :func:`map_to_csv`; with ``dims`` every voxel must be present."""
    try:
        rows = [r for r in csv.reader(io.StringIO(Path(path).read_text())) if r]
    except OSError as err:
        raise FormatError(f"cannot read map {path}: {err}") from err
    if not rows or rows[0] != ["x", "y", "z", "value"]:
        raise FormatError(f"{path}: expected header x,y,z,value")
    try:
        idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows[1:]], dtype=int).reshape(-1, 3)
        vals = np.array([float(r[3]) for r in rows[1:]])
    except (ValueError, IndexError) as err:
        raise FormatError(f"{path}: malformed row ({err})") from err
    if dims is None:
        dims = tuple(idx.max(axis=0) + 1) if len(idx) else (0, 0, 0)
    elif len(idx) != int(np.prod(dims)) or (len(idx) and np.any((idx < 0) | (idx >= dims))):
        raise FormatError(f"{path}: map does not cover the {tuple(dims)} input grid")
    grid = np.full(dims, np.nan)
    if len(idx):
        grid[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    return grid


def map_to_pgm(grid, name=""):
    """8-bit binary PGM: slices along z stacked vertically, rows along y.

    Values are min-max scaled over the finite entries; the scale is recorded
    in a header comment. Non-finite entries render as 0.
    """
    nx, ny, nz = grid.shape
    finite = np.isfinite(grid)
    if finite.any():
        lo, hi = float(grid[finite].min()), float(grid[finite].max())
    else:
        lo = hi = 0.0
    span = hi - lo
    img = np.zeros_like(grid, dtype=float)
    if span > 0:
        img[finite] = (grid[finite] - lo) / span * 255.0
    pix = np.rint(img).astype(np.uint8)
    # (x, y, z) -> rows (z, y), columns x
    pix = pix.transpose(2, 1, 0).reshape(nz * ny, nx)
    head = f"P5\n# ivimfit map {name} min={fmt(lo)} max={fmt(hi)}\n{nx} {nz * ny}\n255\n"
    return head.encode("ascii") + pix.tobytes()


def read_pgm(data):
    """Parse the PGM written by :func:`map_to_pgm`; returns (pixels, comment)."""
    lines = data.split(b"\n", 4)
    if lines[0] != b"P5":
        raise FormatError("not a binary PGM")
    comment = lines[1].decode()
    w, h = (int(v) for v in lines[2].split())
    pix = np.frombuffer(lines[4], dtype=np.uint8)
    return pix.reshape(h, w), comment


# --------------------------------------------------------------------------
# run configuration

CONFIG_KEYS = {
    "bvalues", "dims", "format", "truth", "d_blood", "noise", "mask", "seed",
    "workers", "method", "methods", "fit", "bounds", "de", "trr",
    "record_timing", "split",
}
FIT_KEYS = {
    "optimizer", "shgo_samples", "shgo_iterations", "normalize", "use_global",
    "use_convex", "use_trr", "split_b", "d_star_fixed",
}
NOISE_KEYS = {"kind", "snr", "seed"}


def _reject_unknown(section, given, allowed):
    for key in sorted(given):
        if key not in allowed:
            where = f"{section}." if section else ""
            raise FormatError(f"unknown configuration key '{where}{key}'")


def load_config(path):
    """Load and validate a JSON run configuration; unknown keys are errors."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as err:
        raise FormatError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise FormatError(f"config {path} is not valid JSON: {err}") from err
    return validate_config(cfg)


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise FormatError("configuration must be a JSON object")
    _reject_unknown("", cfg, CONFIG_KEYS)
    _reject_unknown("fit", cfg.get("fit", {}), FIT_KEYS)
    _reject_unknown("noise", cfg.get("noise", {}), NOISE_KEYS)
    _reject_unknown("bounds", cfg.get("bounds", {}), set(PARAM_NAMES))
    _reject_unknown("de", cfg.get("de", {}), {f.name for f in fields(DeConfig)} - {"seed"})
    _reject_unknown("trr", cfg.get("trr", {}), {f.name for f in fields(lsq.TrrConfig)})
    if isinstance(cfg.get("truth"), dict):
        _reject_unknown("truth", cfg["truth"], set(PARAM_NAMES))
    for key in ("method",):
        if key in cfg and cfg[key] not in METHODS:
            raise FormatError(f"configuration key 'method': unknown method {cfg[key]!r}")
    for m in cfg.get("methods", []):
        if m not in METHODS:
            raise FormatError(f"configuration key 'methods': unknown method {m!r}")
    return cfg


def fit_config_from(cfg, seed=None):
    """Build a :class:`FitConfig` from a validated configuration mapping."""
    try:
        bounds = ParamBounds(**{k: tuple(v) for k, v in cfg.get("bounds", {}).items()})
        de = DeConfig(**{k: tuple(v) if k == "mutation" else v for k, v in cfg.get("de", {}).items()})
        trr = lsq.TrrConfig(**cfg.get("trr", {}))
        fc = FitConfig(bounds=bounds, de=de, trr=trr, **cfg.get("fit", {}))
    except (TypeError, ValueError) as err:
        raise FormatError(f"invalid fit configuration: {err}") from err
    s = cfg.get("seed", 0) if seed is None else seed
    return replace(fc, seed=int(s))


def noise_from(cfg, seed=None):
    n = dict(cfg.get("noise", {}))
    if seed is not None:
        n["seed"] = seed
    try:
        return NoiseSpec(**n)
    except (TypeError, ValueError) as err:
        raise FormatError(f"configuration key 'noise': {err}") from err
