"""Command-line entry point: ``rawild <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import adapter, curve, quantiles, raster, sim, spectral
from .numerics import RankDeficientError, derive_seed, make_rng

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("rawild")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
RASTER_SUFFIXES = (".rawf", ".pgm", ".ppm", ".pnm")


class UsageError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0+local"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- spectral context ---------------------------------------------------------

_CTX: dict = {}


def spectral_context():
    """Database PCA and proxy response, computed once per process."""
    if not _CTX:
        db = spectral.load_sensitivity_db()
        s_bar = spectral.mean_sensitivity(db)
        _CTX["pca"] = spectral.fit_pca(db)
        _CTX["P_A"] = spectral.colorchecker_response(s_bar, spectral.load_d65())
        _CTX["s_bar"] = s_bar
    return _CTX


# --- sim ----------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_toggles(items: list[str]) -> dict[str, bool]:
    out: dict[str, bool] = {}
    for item in items:
        name, sep, state = item.partition("=")
        if not sep or state not in ("on", "off"):
            raise UsageError(f"--toggle expects stage=on|off, got {item!r}")
        names = sim.STAGES if name == "all" else (name,)
        for n in names:
            if n not in sim.STAGES:
                raise UsageError(f"unknown stage {n!r}; stages are {', '.join(sim.STAGES)}, all")
            out[n] = state == "on"
    return out


def merged_config(args) -> sim.SimConfig:
    d = load_config(args.config)
    toggles = dict(d.get("stage_toggles", {}))
    toggles.update(parse_toggles(args.toggle or []))
    d["stage_toggles"] = toggles
    if args.seed is not None:
        d["seed"] = args.seed
    if args.bits is not None:
        d["bit_depths"] = [args.bits]
    try:
        return sim.SimConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def list_inputs(in_dir: Path) -> list[Path]:
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory {in_dir} does not exist")
    return sorted(p for p in in_dir.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)


def _sim_file(task: dict) -> dict:
    """Synthesize all variants of one input; runs in worker processes."""
    path, out_dir = Path(task["path"]), Path(task["out_dir"])
    cfg = sim.SimConfig.from_dict(task["config"])
    records, errors = [], []
    try:
        image = raster.read_raster(path)
    except (OSError, ValueError) as exc:
        return {"outputs": [], "errors": [f"{path.name}: {exc}"]}
    ctx = spectral_context()
    for k, seed in enumerate(task["seeds"]):
        try:
            params = sim.sample_params(cfg, ctx["pca"], ctx["P_A"], make_rng(seed), seed=seed)
            res = sim.apply_sim(image, params, toggles=cfg.stage_toggles)
        except (RankDeficientError, RuntimeError, ValueError) as exc:
            errors.append(f"{path.name} variant {k}: {exc}")
            continue
        out = out_dir / f"{path.stem}_v{k}.rawf"
        prov = out_dir / f"{path.stem}_v{k}.json"
        raster.write_raster(res.image, out)
        prov.write_text(sim.provenance_json(res.provenance) + "\n")
        records.append({"input": path.name, "variant": k, "seed": seed, "path": out.name,
                        "provenance": prov.name, "sha256": sha256_file(out)})
    return {"outputs": records, "errors": errors}


def run_sim(inputs: list[Path], out_dir: Path, cfg: sim.SimConfig, count: int, jobs: int) -> tuple[list, list]:
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [{"path": str(p), "out_dir": str(out_dir), "config": cfg.to_dict(),
              "seeds": [derive_seed(cfg.seed, i * count + k) for k in range(count)]}
             for i, p in enumerate(inputs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sim_file, tasks))
    else:
        results = [_sim_file(t) for t in tasks]
    outputs = [r for res in results for r in res["outputs"]]
    errors = [e for res in results for e in res["errors"]]
    return outputs, errors


def sim_manifest(inputs, outputs, errors, cfg: sim.SimConfig, count: int, argv) -> dict:
    return {
        "tool": "rawild",
        "version": tool_version(),
        "command": "sim",
        "argv": list(argv),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "count": count,
        "seed_rule": "numpy SeedSequence([seed, input_index * count + variant])",
        "pca_model_hash": spectral_context()["pca"].digest(),
        "inputs": [{"path": str(p.resolve()), "sha256": sha256_file(p)} for p in inputs],
        "outputs": outputs,
        "errors": errors,
    }


def cmd_sim(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    cfg = merged_config(args)
    inputs = list_inputs(Path(args.in_dir))
    if not inputs:
        raise FileNotFoundError(f"no rasters ({', '.join(RASTER_SUFFIXES)}) in {args.in_dir}")
    out_dir = Path(args.out_dir)
    outputs, errors = run_sim(inputs, out_dir, cfg, args.count, args.jobs)
    _write_json(out_dir / "manifest.json", sim_manifest(inputs, outputs, errors, cfg, args.count, args.argv))
    for e in errors:
        log.error(e)
    log.info("wrote %d outputs to %s", len(outputs), out_dir)
    return EXIT_DATA if errors else EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("command") != "sim":
        raise ValueError(f"{args.manifest}: only sim manifests can be replayed")
    inputs = [Path(rec["path"]) for rec in manifest["inputs"]]
    for p, rec in zip(inputs, manifest["inputs"]):
        if sha256_file(p) != rec["sha256"]:
            raise ValueError(f"input {p} changed since the recorded run")
    cfg = sim.SimConfig.from_dict(manifest["config"])
    out_dir = Path(args.out_dir)
    outputs, errors = run_sim(inputs, out_dir, cfg, int(manifest["count"]), args.jobs)
    mismatched = [o["path"] for o, ref in zip(outputs, manifest["outputs"]) if o["sha256"] != ref["sha256"]]
    _write_json(out_dir / "manifest.json",
                sim_manifest(inputs, outputs, errors, cfg, int(manifest["count"]), args.argv))
    if mismatched or len(outputs) != len(manifest["outputs"]):
        log.error("replay differs from the recorded run: %s", mismatched or "output count")
        return EXIT_VERIFY
    log.info("replayed %d outputs bit-exactly", len(outputs))
    return EXIT_OK


# --- adapter commands ---------------------------------------------------------

def _load_curve(path: str) -> curve.CurveParams:
    p = Path(path)
    if p.is_dir() or p.name == "manifest.json":
        return adapter.load_bundle(p)[0].curve
    return curve.CurveParams.from_json(p.read_text())


def cmd_apply(args) -> int:
    image = raster.read_raster(args.input)
    params, manifest = adapter.load_bundle(args.params)
    size = manifest.get("image_size")
    if size is not None and tuple(size) != image.shape:
        raise ValueError(f"bundle was built for {size[0]}x{size[1]}, image is {image.height}x{image.width}")
    raster.write_raster(adapter.apply_adapter(image, params), args.output)
    return EXIT_OK


def cmd_curve(args) -> int:
    image = raster.read_raster(args.input)
    raster.write_raster(curve.apply_curve(_load_curve(args.params), image), args.output)
    return EXIT_OK


def cmd_curve_plot(args) -> int:
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    params = _load_curve(args.params)
    t = np.linspace(0.0, 1.0, args.samples)
    g = [curve.eval_curve(params, c, t) for c in range(3)]
    lines = ["t,g_R,g_G,g_B"]
    lines += [",".join(repr(float(v)) for v in (t[i], g[0][i], g[1][i], g[2][i])) for i in range(t.size)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_hist(args) -> int:
    image = raster.read_raster(args.input)
    if args.q < 1:
        raise UsageError("--q must be positive")
    if args.tau <= 0:
        raise UsageError("--tau must be positive")
    if args.subsample_cap < args.q:
        raise UsageError("--subsample-cap must be at least --q")
    d = quantiles.descriptor_for_image(image, args.q, args.mode, args.tau, args.subsample_cap)
    _emit(d.to_json() + "\n" if args.format == "json" else d.to_csv(), args.out)
    return EXIT_OK


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- spectral commands --------------------------------------------------------

def _load_sensitivity(spec: str) -> spectral.CameraSensitivity:
    """'mean' for the database average, or a CSV holding one camera."""
    if spec == "mean":
        return spectral_context()["s_bar"]
    db = spectral.load_sensitivity_db(spec, expected_count=None)
    if len(db) != 1:
        raise ValueError(f"{spec}: expected one camera, found {len(db)}")
    return db[0]


def _illuminant(spec: str) -> np.ndarray:
    if spec.lower() == "d65":
        return spectral.load_d65()
    try:
        T = float(spec)
    except ValueError:
        raise UsageError(f"--illum must be a temperature in kelvin or 'd65', got {spec!r}") from None
    if T <= 0:
        raise UsageError("--illum temperature must be positive")
    return spectral.planck_spd(T)


def cmd_fit_ccm(args) -> int:
    illum = _illuminant(args.illum)
    P_A = spectral.colorchecker_response(_load_sensitivity(args.sens_a), illum)
    P_B = spectral.colorchecker_response(_load_sensitivity(args.sens_b), illum)
    M, sol = spectral.fit_ccm(P_A, P_B)
    _emit(json.dumps({"ccm": M.tolist(), "residual_fro": sol.residual_fro,
                      "condition": sol.condition, "rank": sol.rank}, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_spectra(args) -> int:
    if args.action == "fit-pca":
        db = spectral.load_sensitivity_db(args.db, expected_count=None if args.db else 28)
        pca = spectral.fit_pca(db)
        _emit(pca.to_json() + "\n", args.out)
        for c, name in enumerate("RGB"):
            log.info("%s explained variance ratio %s", name, np.round(pca.explained_variance_ratio[c], 4))
    elif args.action == "sample":
        pca = (spectral.PcaModel.from_json(Path(args.pca).read_text()) if args.pca
               else spectral_context()["pca"])
        rng = make_rng(args.seed)
        cams = [spectral.CameraSensitivity(spectral.sample_sensitivity(pca, rng).curves, f"sample-{i:03d}")
                for i in range(args.count)]
        _emit(spectral.format_sensitivity_csv(cams), args.out)
    else:
        if args.T is None or args.T <= 0:
            raise UsageError("planck needs a positive --T")
        spd = spectral.planck_spd(args.T)
        rows = ["wavelength,power"] + [f"{wl},{v!r}" for wl, v in zip(spectral.WAVELENGTHS_NM, spd)]
        _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


# --- verify / ingest ----------------------------------------------------------

def cmd_verify(args) -> int:
    from . import verify

    if args.table:
        print(verify.traceability_table())
        return EXIT_OK
    results = verify.run_suite(args.suite)
    for r in results:
        print(r.line(), file=sys.stderr)
    report = verify.json_report(args.suite, results)
    _emit(report + "\n", args.report)
    return EXIT_OK if verify.suite_passed(results) else EXIT_VERIFY


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if src.suffix == ".npy":
        counts = np.load(src)
        black = tuple(args.black) if args.black else (0, 0, 0)
        white = args.white if args.white is not None else (1 << args.bits) - 1
        meta = raster.RasterMeta(bit_depth=args.bits, black_level=black, white_level=white,
                                 sensor_name=args.sensor, sidecar={"cfa": args.cfa})
        if counts.ndim == 2:
            image = raster.pack_bayer_rggb(counts, meta)
        else:
            image = raster.normalize_raw(counts, meta)
    else:
        image = raster.read_raster(src)
    raster.write_raster(image, args.output)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rawild", description="RAW tone-mapping operators and sensor simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    p.add_argument("--quiet", action="store_true", help="only log errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def quiet(sp):
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only log errors")
        return sp

    s = quiet(sub.add_parser("sim", help="synthesize captures from virtual sensors"))
    s.add_argument("in_dir")
    s.add_argument("out_dir")
    s.add_argument("--config", help="TOML file with SimConfig fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int, default=1, help="variants per input")
    s.add_argument("--toggle", action="append", metavar="STAGE=on|off",
                   help=f"stages: {', '.join(sim.STAGES)}, or all")
    s.add_argument("--bits", type=int, help="pin the output bit depth")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sim)

    s = quiet(sub.add_parser("replay", help="rerun a sim manifest and compare outputs"))
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_replay)

    s = quiet(sub.add_parser("apply", help="apply an adapter bundle"))
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--params", required=True, help="bundle directory or manifest.json")
    s.set_defaults(func=cmd_apply)

    s = quiet(sub.add_parser("curve", help="apply only the tone curve"))
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--params", required=True, help="curve.json or adapter bundle")
    s.set_defaults(func=cmd_curve)

    s = quiet(sub.add_parser("curve-plot", help="CSV of t, g_R, g_G, g_B"))
    s.add_argument("--params", required=True)
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--out")
    s.set_defaults(func=cmd_curve_plot)

    s = quiet(sub.add_parser("hist", help="per-channel quantile descriptor"))
    s.add_argument("input")
    s.add_argument("--q", type=int, default=quantiles.DEFAULT_Q)
    s.add_argument("--mode", choices=("hard", "soft"), default="hard")
    s.add_argument("--tau", type=float, default=quantiles.DEFAULT_TAU)
    s.add_argument("--subsample-cap", type=int, default=quantiles.DEFAULT_SUBSAMPLE_CAP)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_hist)

    s = quiet(sub.add_parser("fit-ccm", help="least-squares color matrix between two sensors"))
    s.add_argument("--sens-a", required=True, help="single-camera CSV, or 'mean'")
    s.add_argument("--sens-b", required=True, help="single-camera CSV, or 'mean'")
    s.add_argument("--illum", default="d65", help="temperature in kelvin, or d65")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_ccm)

    s = quiet(sub.add_parser("spectra", help="PCA fit, sensitivity sampling, Planck spectra"))
    s.add_argument("action", choices=("fit-pca", "sample", "planck"))
    s.add_argument("--db", help="sensitivity CSV (default: bundled database)")
    s.add_argument("--pca", help="PCA JSON from fit-pca (default: fit the bundled database)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--T", type=float, help="temperature in kelvin")
    s.add_argument("--out")
    s.set_defaults(func=cmd_spectra)

    s = quiet(sub.add_parser("verify", help="run invariant suites"))
    s.add_argument("--suite", default="all", help="raster, curve, grid, quantiles, adapter, "
                                                  "spectral, sim, numerics, cli, acceptance, all")
    s.add_argument("--report", help="write the JSON report here instead of stdout")
    s.add_argument("--table", action="store_true", help="print the traceability table")
    s.set_defaults(func=cmd_verify)

    s = quiet(sub.add_parser("ingest", help="convert PNM or integer .npy counts to RAWF"))
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--bits", type=int, default=16)
    s.add_argument("--black", type=int, nargs=3)
    s.add_argument("--white", type=int)
    s.add_argument("--cfa", default="RGGB")
    s.add_argument("--sensor", default="")
    s.set_defaults(func=cmd_ingest)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"rawild: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="rawild: %(message)s")
    log.setLevel(logging.ERROR if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rawild: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"rawild: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
