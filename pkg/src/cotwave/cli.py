"""Command-line front end.

Exit codes: 0 success, 1 internal error, 2 user or input error,
3 degenerate data.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .cot import CotConfig, GroupSample, estimate_cot
from .density import EstimatorConfig
from .errors import ArgumentError, ConfigurationError, DataError, DegenerateDataError
from .infer import BootstrapConfig, bootstrap_ci
from .simbench import builtin_scenario, run_coverage_experiment, run_rate_experiment

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_DEGENERATE = 3

RESCALE_EPS = 1e-3


class UsageError(Exception):
    """Raised instead of exiting so that argparse errors map to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- data ---------------------------------------------------------------------

@dataclasses.dataclass(eq=False)
class Dataset:
    w: np.ndarray
    y: np.ndarray
    z: np.ndarray
    y_names: List[str]
    z_names: List[str]
    path: str

    def group(self, arm: int) -> GroupSample:
        mask = self.w == arm
        return GroupSample(self.y[mask], self.z[mask])


def _parse_header(header: List[str], path) -> tuple:
    header = [h.strip() for h in header]
    if not header or header[0] != "w":
        raise DataError(f"{path}: line 1: header must start with 'w', got {header[:1]}")
    y_names = [h for h in header[1:] if h.startswith("y")]
    z_names = [h for h in header[1:] if h.startswith("z")]
    expected = ["w"] + [f"y{i}" for i in range(1, len(y_names) + 1)] + [f"z{i}" for i in range(1, len(z_names) + 1)]
    if header != expected or not y_names or not z_names:
        raise DataError(f"{path}: line 1: header must be w,y1..yK,z1..zL, got {','.join(header)}")
    return y_names, z_names


def read_dataset(path) -> Dataset:
    """Read a ``w,y1..yK,z1..zL`` CSV; every problem names its line."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        y_names, z_names = _parse_header(header, path)
        width = 1 + len(y_names) + len(z_names)
        rows = []
        for record in reader:
            line = reader.line_num
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != width:
                raise DataError(f"{path}: line {line}: expected {width} fields, got {len(record)}")
            try:
                values = [float(c) for c in record]
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric field") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: line {line}: non-finite value")
            if values[0] not in (0.0, 1.0):
                raise DataError(f"{path}: line {line}: w must be 0 or 1, got {record[0].strip()}")
            rows.append(values)
    data = np.array(rows, dtype=float).reshape(-1, width)
    ds = Dataset(
        data[:, 0].astype(int), data[:, 1 : 1 + len(y_names)], data[:, 1 + len(y_names) :], y_names, z_names, str(path)
    )
    for arm, label in ((0, "control"), (1, "treated")):
        size = int(np.sum(ds.w == arm))
        if size < 2:
            raise DegenerateDataError(f"{path}: the {label} arm has {size} rows; at least 2 are needed")
    return ds


def _check_unit_range(ds: Dataset) -> None:
    for names, block in ((ds.y_names, ds.y), (ds.z_names, ds.z)):
        for k, name in enumerate(names):
            bad = np.flatnonzero((block[:, k] < 0) | (block[:, k] > 1))
            if bad.size:
                raise DataError(
                    f"{ds.path}: line {bad[0] + 2}: column {name} = {block[bad[0], k]} is outside [0, 1]; run 'rescale' first"
                )


# -- rescaling ------------------------------------------------------------------

def rescale_columns(values: np.ndarray, eps: float = RESCALE_EPS):
    """Per-column affine map of ``[min, max]`` onto ``[eps, 1 - eps]``.

    Returns the mapped array and ``(offset, scale)`` with
    ``mapped = eps + (x - offset) * scale``.
    """
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    width = hi - lo
    if np.any(width <= 0):
        k = int(np.flatnonzero(width <= 0)[0])
        raise DegenerateDataError(f"column {k} is constant; its range is zero")
    scale = (1.0 - 2.0 * eps) / width
    return eps + (values - lo) * scale, lo, scale


def invert_rescale(mapped: np.ndarray, offset: np.ndarray, scale: np.ndarray, eps: float = RESCALE_EPS) -> np.ndarray:
    return offset + (mapped - eps) / scale


def _load_affine(path) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read affine metadata {path}: {exc}") from None


def original_scale(value: float, meta: Dict[str, Any]) -> Dict[str, Any]:
    """Quadratic-cost value on the original outcome scale when all outcome axes share one scale."""
    scales = [c["scale"] for c in meta["columns"] if c["name"].startswith("y")]
    if np.allclose(scales, scales[0], rtol=1e-12, atol=0.0):
        return {"value_original_scale": value / scales[0] ** 2, "warning": None}
    return {
        "value_original_scale": None,
        "warning": "outcome axes were rescaled by different factors; value is in normalized units",
    }


# -- configuration ----------------------------------------------------------------

def _default_threads() -> int:
    raw = os.environ.get("COTWAVE_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"COTWAVE_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError("COTWAVE_THREADS must be >= 1")
    return value


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict) or set(cfg) - {"estimator", "cot", "bootstrap"}:
        raise ConfigurationError("config file must be an object with keys among estimator, cot, bootstrap")
    return cfg


def _replace(obj, section: Dict[str, Any], what: str):
    fields = {f.name for f in dataclasses.fields(obj)}
    unknown = set(section) - fields
    if unknown:
        raise ConfigurationError(f"unknown {what} keys in config: {sorted(unknown)}")
    return dataclasses.replace(obj, **section)


def resolve_configs(args) -> tuple:
    """Merge defaults, the optional config file and explicit flags (flags win)."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    est = _replace(EstimatorConfig(), file_cfg.get("estimator", {}), "estimator")
    flags = {
        "wavelet_order": args.wavelet_order,
        "J_joint": args.j_joint,
        "J_z": args.j_z,
        "grid_ny": args.grid_ny,
        "grid_nz": args.grid_nz,
    }
    est = dataclasses.replace(est, **{k: v for k, v in flags.items() if v is not None})
    cot_section = dict(file_cfg.get("cot", {}))
    cot = _replace(CotConfig(estimator=est), cot_section, "cot")
    threads = args.threads if args.threads is not None else _default_threads()
    cot = dataclasses.replace(
        cot,
        n_z=_mc_size(args.nz) if args.nz is not None else cot.n_z,
        n_y=_mc_size(args.ny) if args.ny is not None else cot.n_y,
        seed=args.seed,
        threads=threads,
    )
    boot = _replace(BootstrapConfig(), file_cfg.get("bootstrap", {}), "bootstrap")
    boot_flags = {"B": getattr(args, "bootstrap_b", None), "level": getattr(args, "level", None)}
    boot = dataclasses.replace(boot, seed=args.seed, threads=threads, **{k: v for k, v in boot_flags.items() if v is not None})
    return est, cot, boot


def _mc_size(raw: str):
    if raw == "auto":
        return raw
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"Monte Carlo size must be an integer or 'auto', got {raw!r}") from None


def _run_config(cot: CotConfig, boot: Optional[BootstrapConfig], extra: Dict[str, Any]) -> Dict[str, Any]:
    cfg = {"cot": cot.to_dict(), "threads": cot.threads}
    if boot is not None:
        cfg["bootstrap"] = dataclasses.asdict(boot)
    cfg.update(extra)
    return cfg


def _payload(result, config, seed, diagnostics) -> Dict[str, Any]:
    return {"result": result, "config": config, "seed": seed, "diagnostics": diagnostics, "version": __version__}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _emit(payload: Dict[str, Any], out: Optional[str]) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- commands ---------------------------------------------------------------------

def cmd_estimate(args) -> int:
    est, cot, _ = resolve_configs(args)
    ds = read_dataset(args.data)
    _check_unit_range(ds)
    fit = estimate_cot(ds.group(0), ds.group(1), cot)
    result = fit.to_dict()
    if args.affine:
        result.update(original_scale(fit.value, _load_affine(args.affine)))
    config = _run_config(cot, None, {"data": ds.path, "command": "estimate"})
    _emit(_payload(result, config, cot.seed, fit.diagnostics), args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    est, cot, boot = resolve_configs(args)
    if args.method is not None:
        boot = dataclasses.replace(boot, method=args.method)
    ds = read_dataset(args.data)
    _check_unit_range(ds)
    ci = bootstrap_ci(ds.group(0), ds.group(1), cot, boot)
    result = ci.to_dict()
    if args.affine:
        meta = _load_affine(args.affine)
        scaled = original_scale(1.0, meta)
        if scaled["value_original_scale"] is not None:
            factor = scaled["value_original_scale"]
            result["original_scale"] = {k: result[k] * factor for k in ("point", "lower", "upper", "sd_hat")}
        result["warning"] = scaled["warning"]
    config = _run_config(cot, boot, {"data": ds.path, "command": "infer"})
    diagnostics = {"replicates": sorted(float(v) for v in ci.replicates)}
    _emit(_payload(result, config, cot.seed, diagnostics), args.out)
    return EXIT_OK


def _parse_n_list(raw: str) -> List[int]:
    try:
        values = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"--n must be a comma-separated list of integers, got {raw!r}") from None
    if not values or any(v < 2 for v in values):
        raise ConfigurationError("--n values must be integers >= 2")
    return values


def cmd_simulate(args) -> int:
    est, cot, boot = resolve_configs(args)
    model = builtin_scenario(args.scenario)
    n_list = _parse_n_list(args.n)
    if args.mode == "rates":
        report = run_rate_experiment(model, n_list, args.reps, cot, args.seed, args.oracle_m, cot.threads)
    else:
        if len(n_list) != 1:
            raise ConfigurationError("coverage mode takes a single --n")
        report = run_coverage_experiment(model, n_list[0], args.reps, cot, boot, args.seed, args.oracle_m, threads=cot.threads)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{model.name}_{args.mode}"
    report.write_csv(out / f"{stem}.csv")
    if args.emit_plot_data:
        report.write_plot_data(out / f"{stem}_plot.csv")
    config = _run_config(cot, boot if args.mode == "coverage" else None, {"command": "simulate", **report.config})
    diagnostics = {"rows": len(report.rows), "csv": f"{stem}.csv"}
    _emit(_payload(report.aggregates(), config, args.seed, diagnostics), str(out / f"{stem}.json"))
    return EXIT_OK


def cmd_rescale(args) -> int:
    ds = read_dataset(args.data)
    block = np.hstack([ds.y, ds.z])
    mapped, offset, scale = rescale_columns(block)
    names = ds.y_names + ds.z_names
    out = args.out
    if out is None:
        raise ConfigurationError("rescale needs --out")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["w"] + names)
        for w, row in zip(ds.w, mapped):
            writer.writerow([int(w)] + [repr(float(v)) for v in row])
    meta = {
        "eps": RESCALE_EPS,
        "source": ds.path,
        "columns": [
            {"name": nm, "offset": float(o), "scale": float(s)} for nm, o, s in zip(names, offset, scale)
        ],
        "inverse": "x = offset + (mapped - eps) / scale",
        "version": __version__,
    }
    affine = args.affine or str(Path(out).with_suffix(".affine.json"))
    Path(affine).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wavelet-order", type=int, help="Daubechies order (4 gives db4)")
    p.add_argument("--j-joint", type=int, help="finest resolution level of the joint fit")
    p.add_argument("--j-z", type=int, help="resolution of a separate covariate-marginal fit")
    p.add_argument("--grid-ny", type=int, help="grid nodes per outcome axis")
    p.add_argument("--grid-nz", type=int, help="grid nodes per covariate axis")
    p.add_argument("--nz", help="covariate draws, integer or 'auto'")
    p.add_argument("--ny", help="outcome draws per covariate draw, integer or 'auto'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, help="worker threads (default: $COTWAVE_THREADS or 1)")
    p.add_argument("--config", help="JSON file with estimator/cot/bootstrap sections")
    p.add_argument("--out", help="output path (directory for simulate)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cotwave", description="Wavelet-based conditional optimal transport estimates.")
    parser.add_argument("--version", action="version", version=f"cotwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="point estimate from a CSV")
    p.add_argument("data")
    p.add_argument("--affine", help="metadata written by 'rescale' to report on the original scale")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="bootstrap confidence interval from a CSV")
    p.add_argument("data")
    p.add_argument("--bootstrap-b", "--B", dest="bootstrap_b", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--method", choices=("normal", "percentile"))
    p.add_argument("--affine")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="rate or coverage experiment on a built-in scenario")
    p.add_argument("scenario")
    p.add_argument("mode", choices=("rates", "coverage"))
    p.add_argument("--n", default="500", help="sample size, or comma-separated sizes for rates")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--bootstrap-b", "--B", dest="bootstrap_b", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--oracle-m", type=int, default=100_000)
    p.add_argument("--emit-plot-data", action="store_true", help="also write a tidy CSV for plotting")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rescale", help="min-max map y and z columns into [eps, 1 - eps]")
    p.add_argument("data")
    p.add_argument("--out", help="rescaled CSV path")
    p.add_argument("--affine", help="metadata path (default: next to --out)")
    p.set_defaults(func=cmd_rescale)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigurationError, ArgumentError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - stable exit code for harnesses
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
