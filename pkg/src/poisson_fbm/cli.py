"""Command-line entry point: ``poisson-fbm {simulate,verify,convergence,oracle}``.

Every run writes its outputs plus a ``manifest.json`` into ``--out``. Outputs
are staged in a temporary directory and only moved into place when the run
succeeds, so a failed run leaves no partial files behind.

Settings are resolved as command-line flags > ``--config`` JSON file >
built-in defaults.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__, suites
from .errors import InvalidArgument, InvalidGrid
from .kernels import KernelParams, KernelVariant, fbm_covariance
from .oracles import OracleConfig, fbm_exact_paths
from .pathgen import (
    WORKERS_ENV,
    ApproxConfig,
    bound_constants,
    paths_matrix,
    q_supremum,
    simulate_paths,
    truncation_loss,
    write_paths_csv,
)
from .stats import (
    ConvergenceReport,
    bound_check,
    covariance_deviation,
    empirical_covariance,
    gaussianity_test,
    hurst_estimate,
)

log = logging.getLogger("poisson_fbm")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3

DEFAULTS = {
    "n": 8.0,
    "ns": [2.0, 4.0, 8.0, 16.0],
    "hurst": 0.7,
    "s": 1.0,
    "replicas": 1000,
    "seed": 0,
    "grid": 64,
    "variant": "standard",
    "out": "runs",
    "format": "csv",
}


@dataclass
class RunManifest:
    command: str
    settings: dict
    version: str = __version__
    config_hash: str = ""
    constants: dict = dc_field(default_factory=dict)
    outputs: dict = dc_field(default_factory=dict)
    timings: dict = dc_field(default_factory=dict)
    environment: dict = dc_field(default_factory=dict)
    status: str = "ok"


def _hurst(value):
    v = float(value)
    if not 0.5 < v < 1.0:
        raise argparse.ArgumentTypeError(f"Hurst index must lie in the open interval (1/2, 1), got {v}")
    return v


def _positive(kind):
    def parse(value):
        v = kind(value)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {value}")
        return v

    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # defaults are None so a config file can fill in what the flags leave unset
    common.add_argument("--n", type=_positive(float), help="approximation index / field intensity")
    common.add_argument("--hurst", type=_hurst, help="Hurst index H in (1/2, 1)")
    common.add_argument("--s", type=_positive(float), help="kernel shift s > 0")
    common.add_argument("--replicas", type=_positive(int), help="independent fields / paths")
    common.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
    common.add_argument("--grid", type=_positive(int), help="number of equispaced times on [0, 1]")
    common.add_argument("--variant", choices=[v.value for v in KernelVariant])
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="poisson-fbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="sample paths Y_n on the time grid")
    v = sub.add_parser("verify", parents=[common], help="run an analytic-oracle suite")
    v.add_argument("suite", choices=sorted(suites.SUITES))
    c = sub.add_parser("convergence", parents=[common], help="covariance deviation across n")
    c.add_argument("--ns", type=_positive(float), nargs="+", help="values of n (default 2 4 8 16)")
    sub.add_parser("oracle", parents=[common], help="exact fBm paths by Cholesky factorization")
    return parser


def resolve_settings(args):
    settings = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        settings.update(file_cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    _hurst(settings["hurst"])
    if not 0 <= int(settings["seed"]) < 2**64:
        raise InvalidArgument("seed must be a 64-bit unsigned integer")
    if int(settings["grid"]) < 2:
        raise InvalidArgument("grid needs at least two points")
    return settings


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _approx_config(settings, n=None):
    return ApproxConfig(
        n=float(settings["n"] if n is None else n),
        time_grid=tuple(np.linspace(0.0, 1.0, int(settings["grid"]))),
        kernel=KernelParams(float(settings["hurst"]), float(settings["s"])),
        variant=settings["variant"],
        replicas=int(settings["replicas"]),
        seed=int(settings["seed"]),
    )


def _constants(settings):
    params = KernelParams(float(settings["hurst"]), float(settings["s"]))
    bc = bound_constants(params)
    zmax = q_supremum()[1]
    return {"c_H": params.c_H, "K1": bc.K1, "K2": bc.K2, "C": bc.C, "C_argmax": zmax, "K": bc.K}


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_matrix(path, times, X, fmt):
    if fmt == "json":
        _dump(path, {"t": list(map(float, times)), "paths": X.tolist()})
        return
    with open(path, "w") as fh:
        fh.write("replica,t,value\n")
        for r, row in enumerate(X):
            for t, v in zip(times, row):
                fh.write(f"{r},{float(t)!r},{float(v)!r}\n")


# -- commands -------------------------------------------------------------------


def cmd_simulate(settings, stage, manifest):
    cfg = _approx_config(settings)
    manifest.config_hash = cfg.config_hash
    paths = simulate_paths(cfg)
    name = "paths." + settings["format"]
    if settings["format"] == "csv":
        write_paths_csv(paths, stage / name)
    else:
        _write_matrix(stage / name, cfg.times, paths_matrix(paths), "json")
    loss = {repr(float(t)): truncation_loss(t, cfg.kernel, cfg.n) for t in (0.25, 0.5, 1.0)}
    manifest.constants["truncation_loss"] = loss
    return True


def cmd_verify(settings, stage, manifest, suite, explicit):
    kw = {"seed": int(settings["seed"]), "H": float(settings["hurst"]), "s": float(settings["s"])}
    # suite-specific defaults apply unless the user set n / replicas explicitly
    for key in ("n", "replicas"):
        if key in explicit:
            kw[key] = settings[key]
    result = suites.SUITES[suite](**kw)
    # wall-clock timings go to the manifest so the result file stays reproducible
    manifest.timings.update(_pop_seconds(result, suite))
    _dump(stage / f"verify_{suite}.json", result)
    manifest.config_hash = hashlib.sha256(json.dumps([suite, kw], sort_keys=True).encode()).hexdigest()[:16]
    return bool(result["passed"])


def _pop_seconds(obj, prefix):
    found = {}
    if isinstance(obj, dict):
        if "seconds" in obj:
            found[prefix] = obj.pop("seconds")
        for k, v in obj.items():
            found.update(_pop_seconds(v, f"{prefix}.{k}"))
    return found


def cmd_convergence(settings, stage, manifest):
    if int(settings["replicas"]) < 2:
        raise InvalidArgument("convergence needs at least 2 replicas")
    params = KernelParams(float(settings["hurst"]), float(settings["s"]))
    consts = bound_constants(params)
    report = ConvergenceReport(H=params.H, s=params.s, replicas=int(settings["replicas"]))
    hashes = {}
    for n in settings["ns"]:
        cfg = _approx_config(settings, n=n)
        hashes[repr(float(n))] = cfg.config_hash
        X = paths_matrix(simulate_paths(cfg))
        est = empirical_covariance(X, cfg.times)
        sup, zsup = covariance_deviation(est, params.H)
        keep = cfg.times > 0
        target = fbm_covariance(cfg.times[keep][:, None], cfg.times[keep][None, :], params.H)
        mean_z = float(np.mean(np.abs(est.cov[np.ix_(keep, keep)] - target) / est.stderr[np.ix_(keep, keep)]))
        try:
            p = gaussianity_test(X[:, -1], 0.0, cfg.times[-1] ** (2 * params.H))
        except InvalidArgument:
            p = None
        try:
            hurst = hurst_estimate(X, cfg.times, min_replicas=2).H
        except InvalidArgument:
            hurst = None
        b = bound_check(X, params, consts, cfg.times)
        raw_margin = float(np.min((b.bound - b.variance)[keep]))
        report.add(n=float(n), sup_norm=sup, normalized_sup=zsup, mean_abs_z=mean_z,
                   ks_pvalue=p, hurst=hurst, bound_margin=raw_margin)
        report.variance_profiles[float(n)] = (cfg.times, b.variance, b.bound)
        log.info("n=%g sup=%.4f", n, sup)
    manifest.config_hash = hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()[:16]
    (stage / "report.json").write_text(report.to_json() + "\n")
    (stage / "report.txt").write_text(report.to_text())
    (stage / "convergence.csv").write_text(report.to_csv())
    (stage / "variance.csv").write_text(report.variance_csv())
    return True


def cmd_oracle(settings, stage, manifest):
    times = np.linspace(0.0, 1.0, int(settings["grid"]))
    cfg = OracleConfig(H=float(settings["hurst"]), time_grid=tuple(times),
                       replicas=int(settings["replicas"]), seed=int(settings["seed"]))
    manifest.config_hash = cfg.config_hash
    X = fbm_exact_paths(cfg)
    _write_matrix(stage / ("oracle_paths." + settings["format"]), times, X, settings["format"])
    return True


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
    except (InvalidArgument, argparse.ArgumentTypeError) as exc:
        parser.error(str(exc))
    explicit = {k for k in DEFAULTS if getattr(args, k, None) is not None}
    if args.config:
        with open(args.config) as fh:
            explicit |= set(json.load(fh))
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    manifest = RunManifest(command=args.command if args.command != "verify" else f"verify {args.suite}",
                           settings=settings)
    manifest.environment = {"python": platform.python_version(), "numpy": np.__version__,
                            "workers": os.environ.get(WORKERS_ENV, "1")}
    t0 = time.perf_counter()
    try:
        manifest.constants.update(_constants(settings))
        if args.command == "simulate":
            ok = cmd_simulate(settings, stage, manifest)
        elif args.command == "verify":
            ok = cmd_verify(settings, stage, manifest, args.suite, explicit)
        elif args.command == "convergence":
            ok = cmd_convergence(settings, stage, manifest)
        else:
            ok = cmd_oracle(settings, stage, manifest)
    except (InvalidArgument, InvalidGrid) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # clean up partial output, then report
        shutil.rmtree(stage, ignore_errors=True)
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    manifest.status = "ok" if ok else "failed"
    for f in sorted(stage.iterdir()):
        manifest.outputs[f.name] = sha256_file(f)
    _dump(stage / "manifest.json", asdict(manifest))
    for f in stage.iterdir():
        os.replace(f, out / f.name)
    stage.rmdir()
    print(json.dumps({"status": manifest.status, "out": str(out), "outputs": manifest.outputs}, indent=2))
    return EXIT_OK if ok else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
