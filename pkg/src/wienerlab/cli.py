"""Batch runner: ``wienerlab <experiment> --config FILE --seed N [--workers N] [--out DIR] [--dry-run]``.

Every flag can also come from the environment (``WIENERLAB_CONFIG``,
``WIENERLAB_SEED``, ``WIENERLAB_WORKERS``, ``WIENERLAB_OUT``,
``WIENERLAB_DRY_RUN``); explicit flags win. Exit status: 0 on success, 1 when a
bound violation is flagged, 2 on usage or config errors.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, mc
from .chaos import ChaosVector, MAX_DIM, MAX_ORDER
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load_config
from .distances import TV_LABEL
from .fourth_moment import canonical_family, constant_family, fm_sequence_verdict
from .hermite import ZERO_CUTOFF, HermiteCoeffs
from .report import write_table
from .stein import MIN_VARIANCE, bound_report, multidim_bound, poincare_suite
from .subordinated import JITTER, ODD_TOL, TAIL_TARGET, StationaryIncrementModel, SubordinatedConfig, rate_study

ENV_PREFIX = "WIENERLAB_"
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
FAMILIES = {"canonical": canonical_family, "constant": constant_family}


def _tolerances() -> dict:
    return {
        "stderr_band": mc.STDERR_BAND,
        "low_confidence_rel": mc.LOW_CONFIDENCE_REL,
        "mc_chunk": mc.CHUNK,
        "hermite_zero_cutoff": ZERO_CUTOFF,
        "min_variance": MIN_VARIANCE,
        "max_order": MAX_ORDER,
        "max_dim": MAX_DIM,
        "cholesky_jitter": JITTER,
        "odd_coefficient_tol": ODD_TOL,
        "quadrature_tail_target": TAIL_TARGET,
    }


def _metadata(cfg: ExperimentConfig, seed: int, workers: int) -> dict:
    return {
        "experiment": cfg.subcommand,
        "config": str(cfg.path) if cfg.path else None,
        "config_sha256": cfg.digest,
        "config_values": cfg.values,
        "seed": seed,
        "workers": workers,
        "tolerances": _tolerances(),
        "versions": {
            "wienerlab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _int(cfg: ExperimentConfig, key: str, minimum: int = 1, default=None) -> int:
    v = cfg.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        cfg.fail(key, f"expected an integer >= {minimum}, got {v!r}")
    return v


def _functional(cfg: ExperimentConfig, name: str, key: str = "functionals") -> ChaosVector:
    path = cfg.resolve(name)
    try:
        return ChaosVector.from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        cfg.fail(key, f"cannot read {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        cfg.fail(key, f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    except (ValueError, KeyError, TypeError) as exc:
        cfg.fail(key, f"{path}: {exc}")


def _functionals(cfg: ExperimentConfig) -> list[tuple[str, ChaosVector]]:
    names = cfg.get("functionals")
    if not isinstance(names, list) or not names or not all(isinstance(x, str) for x in names):
        cfg.fail("functionals", "expected a nonempty array of file names")
    return [(Path(n).stem, _functional(cfg, n)) for n in names]


# Each runner returns (rows, extra metadata, violation flag). With ``dry`` set it
# only validates inputs and returns no rows.

def run_stein(cfg, seed, workers, dry=False):
    fs = _functionals(cfg)
    n = _int(cfg, "n", 2)
    bins = _int(cfg, "hist_bins", 2, default=20)
    for name, F in fs:
        if F.variance() < MIN_VARIANCE:
            cfg.fail("functionals", f"{name}: variance {F.variance():.3g} is degenerate")
    if dry:
        return [], {}, False
    reports = [bound_report(F, n, seed, functional_id=name, workers=workers, hist_bins=bins) for name, F in fs]
    return [r.row() for r in reports], {"tv_hist_label": TV_LABEL}, any(r.violation for r in reports)


def run_fourth_moment(cfg, seed, workers, dry=False):
    n = _int(cfg, "n", 2)
    if "family" in cfg.values:
        fam = cfg.get("family")
        if fam not in FAMILIES:
            cfg.fail("family", f"unknown family {fam!r}, choose from {sorted(FAMILIES)}")
        ks = cfg.get("ks", [1, 2, 4, 8, 16])
        if not isinstance(ks, list) or not ks or not all(isinstance(k, int) and k >= 1 for k in ks):
            cfg.fail("ks", "expected a nonempty array of positive integers")
        kernels = [(2, FAMILIES[fam](k)) for k in ks]
    else:
        names = cfg.get("kernels")
        if not isinstance(names, list) or not names:
            cfg.fail("kernels", "expected a nonempty array of file names")
        kernels = []
        for name in names:
            F = _functional(cfg, name, "kernels")
            orders = [q for q in F.orders if not F.kernel(q).is_zero()]
            if len(orders) != 1:
                cfg.fail("kernels", f"{name}: expected a single chaos component, got orders {orders}")
            kernels.append((orders[0], F.kernel(orders[0])))
        ks = cfg.get("ks", list(range(1, len(kernels) + 1)))
        if not isinstance(ks, list) or len(ks) != len(kernels):
            cfg.fail("ks", "must have one entry per kernel")
    if dry:
        return [], {}, False
    v = fm_sequence_verdict(kernels, n, seed, workers=workers, ks=ks)
    extra = {"trends": v.trends, "converging": v.converging, "contraction_rhs_holds": v.contraction_rhs_holds}
    return v.rows(), extra, not v.contraction_rhs_holds


def _subordinated_config(cfg, seed) -> SubordinatedConfig:
    try:
        model = StationaryIncrementModel.fbm(float(cfg.get("H")))
    except (TypeError, ValueError) as exc:
        cfg.fail("H", str(exc))
    coeffs = cfg.get("f")
    if not isinstance(coeffs, list) or not coeffs or not all(isinstance(c, (int, float)) for c in coeffs):
        cfg.fail("f", "expected an array of Hermite coefficients c_0, c_1, ...")
    Ts = cfg.get("T")
    if not isinstance(Ts, list) or not Ts or not all(isinstance(t, (int, float)) and t > 0 for t in Ts):
        cfg.fail("T", "expected a nonempty array of positive numbers")
    try:
        return SubordinatedConfig(
            model=model,
            f=HermiteCoeffs(tuple(float(c) for c in coeffs)),
            a=float(cfg.get("a", 0.0)),
            b=float(cfg.get("b", 1.0)),
            Ts=Ts,
            delta=float(cfg.get("delta", 0.125)),
            replicas=_int(cfg, "replicas", 1, default=2000),
            seed=seed,
            qmax=cfg.get("qmax"),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


def run_subordinated(cfg, seed, workers, dry=False):
    sc = _subordinated_config(cfg, seed)
    if dry:
        return [], {}, False
    st = rate_study(sc, workers=workers)
    extra = {
        "slope_bound": st.slope_bound,
        "slope_dw": st.slope_dw,
        "sigma2": st.sigma.value,
        "sigma2_error": st.sigma.error,
        "cholesky_jitter_used": st.jitter,
    }
    return st.table(), extra, st.violation


def run_poincare(cfg, seed, workers, dry=False):
    fs = _functionals(cfg)
    n = _int(cfg, "n", 2)
    p = _int(cfg, "p", 2, default=4)
    if p % 2:
        cfg.fail("p", "must be even")
    for name, F in fs:
        if F.mean != 0.0:
            cfg.fail("functionals", f"{name}: functional must be centered")
    if dry:
        return [], {}, False
    rows, bad = [], False
    for name, F in fs:
        rep = poincare_suite(F, p, n, seed, workers=workers)
        bad |= not rep.all_hold
        rows.extend({"functional": name, **r} for r in rep.rows())
    return rows, {}, bad


def run_multidim(cfg, seed, workers, dry=False):
    fs = _functionals(cfg)
    n = _int(cfg, "n", 2)
    C = np.asarray(cfg.get("C"), dtype=float)
    d = len(fs)
    if C.shape != (d, d):
        cfg.fail("C", f"expected a {d}x{d} matrix, got shape {C.shape}")
    if not np.allclose(C, C.T) or np.any(np.linalg.eigvalsh((C + C.T) / 2) <= 0):
        cfg.fail("C", "must be symmetric positive definite")
    if dry:
        return [], {}, False
    rep = multidim_bound([F for _, F in fs], C, n, seed, workers=workers)
    extra = {
        "covariance_exact": rep.covariance_exact.tolist(),
        "covariance_emp": rep.covariance_emp.tolist(),
        "covariance_emp_se": rep.covariance_emp_se.tolist(),
    }
    return [{"functionals": ";".join(name for name, _ in fs), **rep.row()}], extra, rep.covariance_mismatch


RUNNERS = {
    "stein": run_stein,
    "fourth-moment": run_fourth_moment,
    "subordinated": run_subordinated,
    "poincare": run_poincare,
    "multidim": run_multidim,
}


def build_parser() -> argparse.ArgumentParser:
    env = os.environ.get
    parser = argparse.ArgumentParser(prog="wienerlab", description="Reproducible Stein-Malliavin experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=env(ENV_PREFIX + "CONFIG"), help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=env(ENV_PREFIX + "SEED"), help="unsigned 64-bit seed")
        sp.add_argument("--workers", type=int, default=env(ENV_PREFIX + "WORKERS"))
        sp.add_argument("--out", default=env(ENV_PREFIX + "OUT", "."), help="output directory")
        sp.add_argument(
            "--dry-run",
            action="store_true",
            default=env(ENV_PREFIX + "DRY_RUN", "").lower() in ("1", "true", "yes"),
            help="validate the config and exit",
        )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if not args.config:
            raise ConfigError("no config given (--config or WIENERLAB_CONFIG)")
        cfg = load_config(args.config, args.experiment)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            raise ConfigError("a seed is mandatory (--seed, WIENERLAB_SEED or 'seed' in the config)")
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        workers = int(args.workers if args.workers is not None else cfg.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        band = cfg.get("stderr_band", mc.STDERR_BAND)
        if not isinstance(band, (int, float)) or band <= 0:
            cfg.fail("stderr_band", "must be a positive number")
        runner = RUNNERS[args.experiment]
        if args.dry_run:
            runner(cfg, seed, workers, dry=True)
            print(f"{args.experiment}: config OK ({cfg.path})")
            return EXIT_OK
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        saved = mc.STDERR_BAND
        mc.STDERR_BAND = float(band)
        try:
            rows, extra, violation = runner(cfg, seed, workers)
            meta = _metadata(cfg, seed, workers)
        finally:
            mc.STDERR_BAND = saved
    except ConfigError as exc:
        print(f"wienerlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    meta["results"] = extra
    meta["violation"] = violation
    csv_path, _ = write_table(out, args.experiment.replace("-", "_"), rows, meta)
    print(f"{args.experiment}: {len(rows)} rows -> {csv_path}")
    if violation:
        print(f"{args.experiment}: bound violation flagged", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
