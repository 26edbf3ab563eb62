"""Command-line interface: ``ivimfit simulate | fit | evaluate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalstats
from .formats import (
    FormatError,
    curves_to_csv,
    fit_config_from,
    fmt,
    load_config,
    map_to_csv,
    map_to_pgm,
    noise_from,
    read_input,
    read_map_csv,
    volume_to_bytes,
    write_atomic,
)
from .model import (
    COMPACT_BVALUES,
    PARAM_NAMES,
    AcquisitionScheme,
    DecayCurve,
    IvimParams,
    ModelDomainError,
    NoiseSpec,
    simulate,
)
from .pipeline import FLAG_BITS, METHODS, VoxelVolume, fit, fit_volume, voxel_seed

MAP_NAMES = ("s0", "f", "d_star", "d")


class CommandError(Exception):
    """Validation failure reported to the user with a nonzero exit status."""


# --------------------------------------------------------------------------
# simulate


def _truth_field(name, spec, n, rng):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(n, float(spec))
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float).ravel()
        if arr.size != n:
            raise CommandError(f"truth.{name}: expected {n} per-voxel values, got {arr.size}")
        return arr
    if isinstance(spec, dict) and set(spec) == {"uniform"} and len(spec["uniform"]) == 2:
        lo, hi = (float(v) for v in spec["uniform"])
        return rng.uniform(lo, hi, size=n)
    raise CommandError(f"truth.{name}: expected a number, a list, or {{\"uniform\": [lo, hi]}}")


def simulate_volume(cfg, seed):
    """Build the simulated volume, truth table and mask from a configuration."""
    try:
        scheme = AcquisitionScheme(cfg.get("bvalues", COMPACT_BVALUES))
    except (ModelDomainError, TypeError) as err:
        raise CommandError(f"bvalues: {err}") from err
    dims = cfg.get("dims", [1, 1, 1])
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(v, int) and v >= 0 for v in dims)):
        raise CommandError("dims: expected three non-negative integers")
    n = int(np.prod(dims))
    truth_cfg = cfg.get("truth")
    if not isinstance(truth_cfg, dict) or set(truth_cfg) != set(PARAM_NAMES):
        raise CommandError(f"truth: must give all of {', '.join(PARAM_NAMES)}")
    rng = np.random.default_rng([seed, 1])
    truth = np.column_stack([_truth_field(k, truth_cfg[k], n, rng) for k in PARAM_NAMES]).reshape(n, 4)
    mask = np.asarray(cfg.get("mask", [1] * n), dtype=bool).ravel()
    if mask.size != n:
        raise CommandError(f"mask: expected {n} entries, got {mask.size}")
    noise = noise_from(cfg)
    d_blood = float(cfg.get("d_blood", 0.0))
    data = np.zeros((n, len(scheme)))
    for i in np.flatnonzero(mask):
        try:
            p = IvimParams.from_array(truth[i], d_blood=d_blood).validate()
        except ModelDomainError as err:
            raise CommandError(f"truth (voxel {i}): {err}") from err
        spec = NoiseSpec(noise.kind, noise.snr, voxel_seed(seed + noise.seed, i))
        data[i] = simulate(p, scheme, spec).signal
    volume = VoxelVolume(data.reshape(*dims, len(scheme)), scheme, mask.reshape(dims))
    return volume, truth, mask


def truth_to_csv(truth, mask):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["voxel", "mask"] + list(PARAM_NAMES))
    for i, row in enumerate(truth):
        w.writerow([i, int(mask[i])] + [fmt(v) for v in row])
    return buf.getvalue()


def read_truth_csv(path):
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    except OSError as err:
        raise FormatError(f"cannot read truth {path}: {err}") from err
    if not rows or rows[0] != ["voxel", "mask"] + list(PARAM_NAMES):
        raise FormatError(f"{path}: expected header voxel,mask,{','.join(PARAM_NAMES)}")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, 6)
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err
    return body[:, 2:], body[:, 1].astype(bool)


def cmd_simulate(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    volume, truth, mask = simulate_volume(cfg, seed)
    kind = cfg.get("format", "volume")
    out = Path(args.output)
    if kind == "volume":
        header, body = volume_to_bytes(volume)
        files = {"data.raw": body, "data.hdr": header}
    elif kind == "table":
        files = {"data.csv": curves_to_csv(volume.scheme.bvalues, volume.data.reshape(-1, len(volume.scheme)))}
    else:
        raise CommandError(f"format: expected 'volume' or 'table', got {kind!r}")
    files["truth.csv"] = truth_to_csv(truth, mask)
    for name, payload in files.items():
        write_atomic(out / name, payload)
    return 0


# --------------------------------------------------------------------------
# fit


def _apply_mask(volume, cfg):
    if "mask" not in cfg:
        return volume
    mask = np.asarray(cfg["mask"], dtype=bool).ravel()
    if mask.size != volume.n_voxels:
        raise CommandError(f"mask: expected {volume.n_voxels} entries, got {mask.size}")
    return VoxelVolume(volume.data, volume.scheme, mask.reshape(volume.dims))


def _stage_summary(results):
    per_stage = {}
    for r in results:
        if r is None:
            continue
        for s in r.stages:
            per_stage.setdefault(s.name, []).append(s)
    return per_stage


def fit_report(maps, method, timing):
    fitted = [r for r in maps.results if r is not None]
    flags = maps.flags[maps.flags >= 0]
    stages = {}
    for name, recs in sorted(_stage_summary(maps.results).items()):
        entry = {
            "fits": len(recs),
            "total_nfev": int(sum(s.nfev for s in recs)),
            "median_nfev": float(np.median([s.nfev for s in recs])),
        }
        if timing:
            entry["total_time"] = float(sum(s.wall_time for s in recs))
        stages[name] = entry
    report = {
        "method": method,
        "n_voxels": int(maps.flags.size),
        "n_fitted": len(fitted),
        "n_masked_out": int(np.sum(maps.flags < 0)),
        "flag_counts": {k: int(np.sum((flags & bit) > 0)) for k, bit in FLAG_BITS.items()},
        "total_nfev": int(sum(r.nfev for r in fitted)),
        "stages": stages,
    }
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def cmd_fit(args):
    cfg = load_config(args.config)
    method = args.method or cfg.get("method", "varpro_sh")
    workers = args.workers or int(cfg.get("workers", 1))
    fcfg = fit_config_from(cfg, args.seed)
    volume = _apply_mask(read_input(args.input), cfg)
    maps = fit_volume(volume, fcfg, method, workers)

    files = {}
    for name in MAP_NAMES:
        grid = getattr(maps, name)
        files[f"{name}.csv"] = map_to_csv(grid)
        files[f"{name}.pgm"] = map_to_pgm(grid, name)
    files["flags.csv"] = map_to_csv(maps.flags, integer=True)
    files["flags.pgm"] = map_to_pgm(np.where(maps.flags < 0, np.nan, maps.flags.astype(float)), "flags")
    files["report.json"] = fit_report(maps, method, bool(cfg.get("record_timing", False)))
    out = Path(args.output)
    for name, payload in files.items():
        write_atomic(out / name, payload)
    return 0


# --------------------------------------------------------------------------
# evaluate


def _evaluate_voxel(job):
    signal, scheme, method, fcfg, index, split_kind = job
    fcfg = replace(fcfg, seed=voxel_seed(fcfg.seed, index))
    curve = DecayCurve(signal, scheme)
    try:
        res = fit(curve, method, fcfg)
    except ValueError:
        res = None
    split = evalstats.make_split(len(scheme), split_kind, seed=fcfg.seed, bvalues=scheme.bvalues)
    cv = evalstats.cross_validate(curve, fcfg, split, method)
    return res, cv.r2


def _run_jobs(jobs, workers):
    if workers <= 1 or len(jobs) < 2:
        return [_evaluate_voxel(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_voxel, jobs))


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_evaluate(args):
    cfg = load_config(args.config)
    methods = args.method or cfg.get("methods") or [cfg.get("method", "varpro_sh")]
    for m in methods:
        if m not in METHODS:
            raise CommandError(f"method: unknown method {m!r}")
    workers = args.workers or int(cfg.get("workers", 1))
    timing = bool(cfg.get("record_timing", False))
    split_kind = cfg.get("split", "interleaved")
    fcfg = fit_config_from(cfg, args.seed)
    volume = _apply_mask(read_input(args.input), cfg)
    nb = len(volume.scheme)
    flat = volume.data.reshape(-1, nb)
    idx = np.flatnonzero(volume.voxel_mask().ravel())

    truth = None
    if args.truth:
        truth, _ = read_truth_csv(args.truth)
        if truth.shape[0] != volume.n_voxels:
            raise CommandError(
                f"truth: {truth.shape[0]} voxels do not match the input's {volume.n_voxels}"
            )
    precomputed = None
    if args.maps:
        precomputed = {k: read_map_csv(Path(args.maps) / f"{k}.csv", volume.dims) for k in MAP_NAMES}

    per_voxel = [["method", "voxel", "cv_r2", "mse_s0", "mse_curve", "nfev"]]
    summary = [["method", "metric", "min", "q25", "median", "q75", "max"]]
    speed_head = ["method", "n_fits", "total_nfev", "median_nfev", "global_median_nfev"]
    if timing:
        speed_head += ["total_time", "median_time"]
    speed = [speed_head]
    fits_by_method = {}

    def add_summary(label, name, values):
        q = evalstats.quantiles(values)
        summary.append([label, name] + [fmt(q[k]) for k in evalstats.QUANTILE_NAMES])

    for method in methods:
        jobs = [(flat[i], volume.scheme, method, fcfg, int(i), split_kind) for i in idx]
        outcomes = _run_jobs(jobs, workers)
        fits = [r for r, _ in outcomes]
        params = np.array([r.params.as_array() if r is not None else [np.nan] * 4 for r in fits]).reshape(-1, 4)
        r2 = np.array([cv for _, cv in outcomes])
        curve_mse = evalstats.mse_report(flat[idx], params, "full_curve", volume.scheme.bvalues, method).mse
        s0_mse = (
            evalstats.mse_report(truth[idx, 0], params[:, 0], "s0", label=method).mse
            if truth is not None else np.full(idx.size, np.nan)
        )
        for k, i in enumerate(idx):
            nfev = fits[k].nfev if fits[k] is not None else 0
            per_voxel.append([method, int(i), fmt(r2[k]), fmt(s0_mse[k]), fmt(curve_mse[k]), nfev])
        add_summary(method, "cv_r2", r2)
        add_summary(method, "mse_s0", s0_mse)
        add_summary(method, "mse_curve", curve_mse)
        ok = [r for r in fits if r is not None]
        fits_by_method[method] = ok
        row = evalstats.speed_report({method: ok})[method]
        glob = evalstats.speed_report({method: ok}, stage_prefix="global")[method]
        line = [method, row.n_fits, row.total_nfev, fmt(row.median_nfev), fmt(glob.median_nfev)]
        if timing:
            line += [fmt(row.total_time), fmt(row.median_time)]
        speed.append(line)

    if precomputed is not None:
        params = np.column_stack([precomputed[k].ravel()[idx] for k in MAP_NAMES])
        curve_mse = evalstats.mse_report(flat[idx], params, "full_curve", volume.scheme.bvalues).mse
        add_summary("maps", "mse_curve", curve_mse)
        if truth is not None:
            add_summary("maps", "mse_s0", evalstats.mse_report(truth[idx, 0], params[:, 0]).mse)

    if "varpro_sh" in fits_by_method and "varpro_de" in fits_by_method:
        rows = evalstats.speed_report(
            {m: fits_by_method[m] for m in ("varpro_sh", "varpro_de")}, stage_prefix="global"
        )
        if rows["varpro_sh"].median_nfev > 0:
            speed.append(["ratio_de_over_sh", "", "", "", fmt(evalstats.speed_ratio(rows))]
                         + ([""] * 2 if timing else []))

    out = Path(args.output)
    write_atomic(out / "scores.csv", _csv(per_voxel))
    write_atomic(out / "summary.csv", _csv(summary))
    write_atomic(out / "speed.csv", _csv(speed))
    return 0


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="ivimfit", description="IVIM fitting by variable projection")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--config", help="JSON run configuration")
        if needs_input:
            p.add_argument("--input", required=True, help=".hdr/.raw volume or .csv curve table")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("simulate", help="simulate IVIM decay curves")
    common(p, needs_input=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit parameter maps")
    common(p)
    p.add_argument("--method", choices=METHODS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="cross-validated R^2, MSE and speed tables")
    common(p)
    p.add_argument("--method", choices=METHODS, action="append",
                   help="method to evaluate (repeatable)")
    p.add_argument("--truth", help="truth.csv written by 'simulate'")
    p.add_argument("--maps", help="directory of fitted maps to score")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (CommandError, FormatError, ModelDomainError) as err:
        print(f"ivimfit {args.command}: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"ivimfit {args.command}: I/O error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
