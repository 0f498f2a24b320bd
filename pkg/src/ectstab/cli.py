"""``ectstab`` command-line interface.

Exit codes: 0 ok, 2 missing/unreadable input, 3 validation failure,
4 incompatible inputs, 5 runtime failure.  Every written artifact carries
the tool version, the resolved arguments and sha256 hashes of its inputs
(CSV files get a ``.meta.json`` sidecar).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from ectstab import __version__
from ectstab.bounds import StabilityInput, interpolation_bound, stability_bound
from ectstab.complex import closed_curve, load_json, make_directions, to_json, validate
from ectstab.ect import EctField, ect_distances, ect_field, field_to_csv, sect_distances, sect_field, sect_to_csv
from ectstab.errors import EctError, GpFitError, IncompatibleError, ValidationError
from ectstab.gp import SineSquaredExpKernel
from ectstab.pipeline import (
    PRESETS,
    ExperimentConfig,
    FourierCurve,
    NoisySamples,
    load_config,
    reparameterize,
    resolve_curve,
    run_consistency_experiment,
    sample_noisy,
    smooth,
)

EXIT_OK, EXIT_MISSING, EXIT_INVALID, EXIT_INCOMPATIBLE, EXIT_RUNTIME = 0, 2, 3, 4, 5


class MissingInput(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"input not found or not a file: {path}")
    return p


def _read_json(path: str):
    p = _input(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise MissingInput(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


# execution settings that must not change any output byte
_EXECUTION_ONLY = {"func", "workers"}


def _meta(args, inputs: list[str]) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _EXECUTION_ONLY}
    return {
        "tool": "ectstab",
        "version": __version__,
        "command": args.command,
        "config": config,
        "inputs": {p: _sha256(Path(p)) for p in inputs},
    }


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def _emit_json(doc: dict, out: str | None) -> None:
    text = _dumps(doc)
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _emit_csv(text: str, meta: dict, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
        Path(out + ".meta.json").write_text(_dumps(meta), encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _wants_json(out: str | None, fmt: str | None) -> bool:
    if fmt:
        return fmt == "json"
    return bool(out) and out.endswith(".json")


# --- commands ---------------------------------------------------------------------


def cmd_gen_curve(args) -> int:
    inputs = []
    if args.coeffs:
        curve = FourierCurve.from_json(_read_json(args.coeffs))
        inputs.append(args.coeffs)
    else:
        curve = resolve_curve(args.preset)
    simple = curve.is_simple()
    doc = curve.to_json()
    doc.update(
        curvature_bound=curve.curvature_bound(),
        length=curve.length(),
        radius=curve.radius(),
        simple=simple,
        meta=_meta(args, inputs),
    )
    if not simple:
        print("warning: curve self-intersects on the dense check grid", file=sys.stderr)
    _emit_json(doc, args.out)
    if args.polygon_out:
        poly = to_json(*closed_curve(curve.constant_speed_points(args.polygon)))
        poly["meta"] = doc["meta"]
        _emit_json(poly, args.polygon_out)
    return EXIT_OK


def _curve_from_args(args) -> tuple[FourierCurve, list[str]]:
    if args.curve:
        return FourierCurve.from_json(_read_json(args.curve)), [args.curve]
    return resolve_curve(args.preset), []


def cmd_sample(args) -> int:
    curve, inputs = _curve_from_args(args)
    samples = sample_noisy(curve, args.n, args.sigma, args.seed)
    doc = samples.to_json()
    doc["meta"] = _meta(args, inputs)
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_smooth(args) -> int:
    samples = NoisySamples.from_json(_read_json(args.samples))
    kernel = SineSquaredExpKernel(args.amplitude2, args.gamma)
    sc = reparameterize(smooth(samples, kernel, args.sigma2), args.grid_size)
    cx, emb = closed_curve(sc.points(args.m_points))
    doc = to_json(cx, emb)
    doc["smoothing"] = {
        "length": sc.length,
        "sigma2": sc.model.sigma2,
        "jitter": sc.model.jitter,
        "kernel": kernel.describe(),
        "m_points": args.m_points,
    }
    doc["meta"] = _meta(args, [args.samples])
    _emit_json(doc, args.out)
    return EXIT_OK


def _load_complex(path: str):
    _input(path)
    try:
        return load_json(path)
    except OSError as exc:
        raise MissingInput(f"cannot read {path}: {exc}") from exc


def cmd_ect(args) -> int:
    cx, emb = _load_complex(args.complex)
    dirs = make_directions(emb.dim, args.directions, args.seed)
    meta = _meta(args, [args.complex])
    fld = ect_field(cx, emb, dirs, args.a, workers=args.workers, meta=meta)
    if _wants_json(args.out, args.format):
        _emit_json(fld.to_json(), args.out)
    else:
        _emit_csv(field_to_csv(fld), meta, args.out)
    return EXIT_OK


def _load_field(path: str) -> EctField:
    doc = _read_json(path)
    try:
        return EctField.from_json(doc)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed field document ({exc!r})") from exc


def cmd_sect(args) -> int:
    fld = _load_field(args.field)
    sf = sect_field(fld)
    meta = _meta(args, [args.field])
    if _wants_json(args.out, args.format):
        doc = {
            "kind": "sect_field",
            "a": fld.a,
            "directions": fld.directions.vectors.tolist(),
            "curves": [{"knots": c.knots.tolist(), "values": c.values.tolist()} for c in sf.curves],
            "meta": meta,
        }
        _emit_json(doc, args.out)
    else:
        _emit_csv(sect_to_csv(sf), meta, args.out)
    return EXIT_OK


def cmd_dist(args) -> int:
    f1, f2 = _load_field(args.first), _load_field(args.second)
    ect_per = ect_distances(f1, f2)
    sect_per = sect_distances(sect_field(f1), sect_field(f2))
    doc = {
        "ect_distance": float(ect_per.max()) if len(ect_per) else 0.0,
        "sect_distance": float(sect_per.max()) if len(sect_per) else 0.0,
        "ect_per_direction": ect_per.tolist(),
        "sect_per_direction": sect_per.tolist(),
        "norm": "max over the listed directions; a lower bound for the sup over all directions",
        "meta": _meta(args, [args.first, args.second]),
    }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    inp = StabilityInput(tuple(args.lengths), args.M, args.vertices, args.eps)
    doc = stability_bound(inp).to_dict()
    if args.eps < math.pi / args.M:
        doc["interpolation_bound"] = interpolation_bound(args.M, math.fsum(args.lengths), args.eps)
    doc["meta"] = _meta(args, [])
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.config:
        _input(args.config)
        cfg = load_config(args.config)
        inputs = [args.config]
    else:
        text = resources.files("ectstab").joinpath("data/default_experiment.json").read_text(encoding="utf-8")
        cfg = ExperimentConfig.from_dict(json.loads(text))
        inputs = []
    if args.workers is not None:
        cfg = type(cfg).from_dict({**cfg.to_dict(), "workers": args.workers})
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = _meta(args, inputs)
    meta["resolved_experiment"] = {k: v for k, v in cfg.to_dict().items() if k != "workers"}
    csv_path = outdir / "results.csv"
    status = EXIT_OK
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        try:
            result = run_consistency_experiment(cfg, fh)
        except KeyboardInterrupt:
            print("interrupted; partial results kept in " + str(csv_path), file=sys.stderr)
            meta["interrupted"] = True
            (outdir / "results.csv.meta.json").write_text(_dumps(meta), encoding="utf-8", newline="\n")
            return EXIT_RUNTIME
    summary = result.summary()
    summary["meta"] = meta
    (outdir / "results.csv.meta.json").write_text(_dumps(meta), encoding="utf-8", newline="\n")
    (outdir / "summary.json").write_text(_dumps(summary), encoding="utf-8", newline="\n")
    if result.failures:
        for f in result.failures:
            print(f"failed run n={f['n']} seed={f['seed']}: {f['error']}", file=sys.stderr)
        status = EXIT_RUNTIME
    sys.stdout.write(_dumps(summary["per_n"]))
    return status


def cmd_validate(args) -> int:
    cx, emb = _load_complex(args.complex)
    report = validate(cx, emb, radius=args.a)
    doc = report.to_dict()
    doc["meta"] = _meta(args, [args.complex])
    _emit_json(doc, args.out)
    return EXIT_OK if report.ok else EXIT_INVALID


# --- parser ------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ectstab", description="Exact Euler characteristic transforms of embedded graphs.")
    p.add_argument("--version", action="version", version=f"ectstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("gen-curve", cmd_gen_curve, "write a Fourier test curve with its curvature bound and length")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--coeffs", help="JSON coefficient file")
    sp.add_argument("--out")
    sp.add_argument("--polygon-out", help="also write the constant-speed inscribed polygon as a complex")
    sp.add_argument("--polygon", type=_positive_int, default=4096, help="vertex count for --polygon-out")

    sp = add("sample", cmd_sample, "noisy samples of a curve at evenly spaced parameters")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--curve", help="curve JSON from gen-curve")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--out")

    sp = add("smooth", cmd_smooth, "GP-smooth samples and write a constant-speed closed polyline complex")
    sp.add_argument("samples")
    sp.add_argument("--m-points", type=_positive_int, default=256)
    sp.add_argument("--sigma2", type=float, default=None)
    sp.add_argument("--amplitude2", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=2.0)
    sp.add_argument("--grid-size", type=_positive_int, default=4096)
    sp.add_argument("--out")

    sp = add("ect", cmd_ect, "ECT field of a complex (CSV or JSON)")
    sp.add_argument("complex")
    sp.add_argument("--directions", type=_positive_int, required=True)
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--format", choices=["csv", "json"])
    sp.add_argument("--out")

    sp = add("sect", cmd_sect, "SECT of a field JSON (CSV or JSON)")
    sp.add_argument("field")
    sp.add_argument("--format", choices=["csv", "json"])
    sp.add_argument("--out")

    sp = add("dist", cmd_dist, "ECT and SECT distances between two field JSON files")
    sp.add_argument("first")
    sp.add_argument("second")
    sp.add_argument("--out")

    sp = add("bounds", cmd_bounds, "stability bound report")
    sp.add_argument("--M", type=float, required=True, help="curvature bound")
    sp.add_argument("--lengths", type=float, nargs="+", required=True, help="arc length of each 1-cell")
    sp.add_argument("--vertices", type=int, required=True, help="number of 0-cells")
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--out")

    sp = add("experiment", cmd_experiment, "estimator-consistency experiment")
    sp.add_argument("config", nargs="?", help="experiment JSON (default: shipped config)")
    sp.add_argument("--outdir", required=True)
    sp.add_argument("--workers", type=_positive_int, default=None)

    sp = add("validate", cmd_validate, "check a complex file; exit 3 on violations")
    sp.add_argument("complex")
    sp.add_argument("--a", type=float, default=None, help="also check all points lie within this radius")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except IncompatibleError as exc:
        print(f"error: incompatible inputs: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except GpFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (EctError, ValueError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
