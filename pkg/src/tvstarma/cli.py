"""Command-line interface: simulate, fit, study, weights, ingest.

Exit codes: 0 success, 2 validation/input error, 3 numerical failure.
Every output embeds (or sits next to) the hash of the resolved config and
the seed, and reruns from the same config are byte-identical.

JSON config schemas are documented in docs/formats.md; unknown keys are
rejected before any computation starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import dataio
from .exceptions import NumericalError
from .kalman import KalmanConfig, fit_kalman
from .ls import build_design, fit_ls
from .model import ModelSpec
from .simulate import (
    PRESETS,
    GneitingCovarianceSpec,
    random_geometry,
    simulate_grf,
    simulate_tvstar,
    simulate_tvstarma,
)
from .spatial import WEIGHT_SCHEMES, build_weight_set
from .study import (
    ArmaPanelGenerator,
    FitTask,
    GrfPanelGenerator,
    StudyDesign,
    emit_tables,
    run_study,
)
from .wavelets import build_dictionary, default_resolution

logger = logging.getLogger(__name__)

_MODEL_KEYS = {"p", "lambda", "q", "m", "J", "wavelet"}
_WEIGHT_KEYS = {"scheme", "alpha", "normalize_distances"}
_KALMAN_KEYS = {"h", "p0_scale", "t0", "sigma_freeze", "divergence_limit"}
_GRF_KEYS = {"sigma2", "zeta", "delta", "gamma", "nugget"}


def _parse_model(obj: dict, T: int | None = None, n: int | None = None) -> ModelSpec:
    dataio.validate_keys(obj, _MODEL_KEYS, {"p", "lambda"}, "model")
    J = obj.get("J")
    if J is None:
        if T is None or n is None:
            raise ValueError("model J omitted and no panel available to derive it")
        J = default_resolution(T, n)
    return ModelSpec(
        p=int(obj["p"]),
        lam=tuple(int(v) for v in obj["lambda"]),
        q=int(obj.get("q", 0)),
        m=tuple(int(v) for v in obj.get("m", [])),
        J=int(J),
        family=obj.get("wavelet", "mexican_hat"),
    )


def _parse_weights(obj: dict) -> dict:
    dataio.validate_keys(obj, _WEIGHT_KEYS, set(), "weights")
    scheme = obj.get("scheme", "inverse_distance")
    if scheme not in WEIGHT_SCHEMES:
        raise ValueError(f"weights.scheme must be one of {WEIGHT_SCHEMES}, got {scheme!r}")
    return {
        "scheme": scheme,
        "alpha": float(obj.get("alpha", 0.5)),
        "normalize_distances": bool(obj.get("normalize_distances", True)),
    }


def _parse_kalman(obj: dict) -> KalmanConfig:
    dataio.validate_keys(obj, _KALMAN_KEYS, set(), "kalman")
    return KalmanConfig(
        h=float(obj.get("h", 0.01)),
        p0_scale=float(obj.get("p0_scale", 1.0)),
        t0=None if obj.get("t0") is None else int(obj["t0"]),
        sigma_freeze=None
        if obj.get("sigma_freeze") is None
        else float(obj["sigma_freeze"]),
        divergence_limit=float(obj.get("divergence_limit", 1e6)),
    )


def _parse_grf(obj: dict) -> GneitingCovarianceSpec:
    dataio.validate_keys(obj, _GRF_KEYS, set(), "grf")
    return GneitingCovarianceSpec(
        sigma2=float(obj.get("sigma2", 1.0)),
        zeta=float(obj.get("zeta", 1.0)),
        delta=float(obj.get("delta", 1.0)),
        gamma=float(obj.get("gamma", 1.0)),
        nugget=float(obj.get("nugget", 0.05)),
    )


def _load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None


def _resolve_geometry(cfg: dict, n: int, fallback_seed):
    if cfg.get("geometry_csv"):
        geom = dataio.read_geometry_csv(cfg["geometry_csv"])
        if geom.n != n:
            raise ValueError(
                f"geometry file has {geom.n} stations but config requests n={n}"
            )
        return geom
    return random_geometry(n, seed=fallback_seed)


# ---------------------------------------------------------------- simulate

_SIMULATE_KEYS = {
    "format",
    "kind",
    "T",
    "n",
    "seed",
    "sigma2",
    "preset",
    "weights",
    "grf",
    "geometry_csv",
    "geometry_seed",
}


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    dataio.validate_keys(cfg, _SIMULATE_KEYS, {"kind", "T", "n"}, "simulate config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        raise ValueError("simulate: a seed is required (config 'seed' or --seed)")
    kind = cfg["kind"]
    T, n, seed = int(cfg["T"]), int(cfg["n"]), int(cfg["seed"])
    chash = dataio.config_hash(cfg)
    geom = _resolve_geometry(cfg, n, cfg.get("geometry_seed", seed))

    if kind in ("tvstar", "tvstarma"):
        preset = cfg.get("preset")
        if preset not in PRESETS:
            raise ValueError(
                f"simulate: preset must be one of {sorted(PRESETS)}, got {preset!r}"
            )
        funcs = PRESETS[preset]()
        wcfg = _parse_weights(cfg.get("weights", {}))
        wset = build_weight_set(geom, **wcfg)
        sim = simulate_tvstar if kind == "tvstar" else simulate_tvstarma
        panel = sim(funcs, wset, T, n, float(cfg.get("sigma2", 1.0)), seed)
    elif kind == "grf":
        gspec = _parse_grf(cfg.get("grf", {}))
        panel = simulate_grf(
            geom,
            T,
            gspec,
            seed,
            normalize_distances=bool(cfg.get("weights", {}).get("normalize_distances", True))
            if cfg.get("weights")
            else True,
        )
    else:
        raise ValueError(f"simulate: unknown kind {kind!r}")

    meta = {"config_sha256": chash, "seed": str(seed)}
    dataio.write_panel_csv(args.out, panel, meta)
    print(f"wrote {args.out} ({panel.T} x {panel.n})")
    if args.out_geometry:
        dataio.write_geometry_csv(args.out_geometry, geom, meta)
        print(f"wrote {args.out_geometry}")
    return 0


# ---------------------------------------------------------------- fit

_FIT_KEYS = {"format", "model", "weights", "method", "kalman"}


def cmd_fit(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    if cfg:
        dataio.validate_keys(cfg, _FIT_KEYS, {"model"}, "fit config")
    panel, panel_meta = dataio.read_panel_csv(args.panel)
    geom = dataio.read_geometry_csv(args.geometry)
    if tuple(panel.ids) != tuple(geom.ids):
        missing = set(panel.ids) ^ set(geom.ids)
        raise ValueError(
            f"panel and geometry stations disagree (difference: {sorted(missing)})"
        )

    spec = _parse_model(cfg.get("model", {"p": 1, "lambda": [1]}), panel.T, panel.n)
    wcfg = _parse_weights(cfg.get("weights", {}))
    kcfg = _parse_kalman(cfg.get("kalman", {}))
    if args.method:
        method = args.method
    else:
        method = cfg.get("method", "auto")
    if method == "auto":
        method = "ls" if spec.q == 0 else "kalman"

    wset = build_weight_set(geom, **wcfg)
    if method == "ls":
        dictionary = build_dictionary(panel.T, spec.J, spec.family)
        fit = fit_ls(build_design(panel, wset, spec, dictionary), panel)
    elif method == "kalman":
        if args.trace:
            kcfg = KalmanConfig(
                h=kcfg.h,
                p0_scale=kcfg.p0_scale,
                t0=kcfg.t0,
                sigma_freeze=kcfg.sigma_freeze,
                divergence_limit=kcfg.divergence_limit,
                record_trace=True,
            )
        fit = fit_kalman(panel, wset, spec, cfg=kcfg)
    else:
        raise ValueError(f"fit: unknown method {method!r}")

    resolved = {
        "model": cfg.get("model", {"p": 1, "lambda": [1]}),
        "weights": wcfg,
        "method": method,
    }
    provenance = {
        "config_sha256": dataio.config_hash(resolved),
        "panel_sha256": dataio.sha256_file(args.panel),
        "geometry_sha256": dataio.sha256_file(args.geometry),
        "seed": panel_meta.get("seed"),
    }
    dataio.write_fit_json(args.out, fit, provenance)
    print(f"wrote {args.out} (method={fit.method}, mse={fit.mse!r})")

    if args.trace and fit.method == "kalman":
        trace = fit.diagnostics.get("trace")
        lines = ["t,coef_norm,trace_P,trace_sigma"]
        for row in trace:
            lines.append(f"{int(row[0])},{row[1]!r},{row[2]!r},{row[3]!r}")
        Path(args.trace).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.trace}")
    return 0


# ---------------------------------------------------------------- study

_STUDY_KEYS = {
    "format",
    "M",
    "T",
    "n",
    "base_seed",
    "normalize_distances",
    "geometry_csv",
    "generators",
    "fit_tasks",
}
_GEN_KEYS = {"kind", "label", "preset", "sigma2", "weights"} | _GRF_KEYS
_TASK_KEYS = {"name", "model", "scheme", "alpha", "method", "kalman"}


def _parse_generator(obj: dict, index: int):
    dataio.validate_keys(obj, _GEN_KEYS, {"kind"}, f"generators[{index}]")
    kind = obj["kind"]
    label = obj.get("label", f"{kind}_{index}")
    if kind in ("tvstar", "tvstarma"):
        preset = obj.get("preset")
        if preset not in PRESETS:
            raise ValueError(
                f"generators[{index}]: preset must be one of {sorted(PRESETS)}"
            )
        wcfg = _parse_weights(obj.get("weights", {}))
        return ArmaPanelGenerator(
            funcs=PRESETS[preset](),
            sigma2=float(obj.get("sigma2", 1.0)),
            label=label,
            **wcfg,
        )
    if kind == "grf":
        gspec = GneitingCovarianceSpec(
            sigma2=float(obj.get("sigma2", 1.0)),
            zeta=float(obj.get("zeta", 1.0)),
            delta=float(obj.get("delta", 1.0)),
            gamma=float(obj.get("gamma", 1.0)),
            nugget=float(obj.get("nugget", 0.05)),
        )
        return GrfPanelGenerator(
            spec=gspec,
            normalize_distances=bool(obj.get("weights", {}).get("normalize_distances", True)),
            label=label,
        )
    raise ValueError(f"generators[{index}]: unknown kind {kind!r}")


def _parse_task(obj: dict, index: int, T: int, n: int) -> FitTask:
    dataio.validate_keys(obj, _TASK_KEYS, {"name", "model"}, f"fit_tasks[{index}]")
    return FitTask(
        name=obj["name"],
        spec=_parse_model(obj["model"], T, n),
        scheme=obj.get("scheme", "inverse_distance"),
        alpha=float(obj.get("alpha", 0.5)),
        method=obj.get("method", "auto"),
        kalman=_parse_kalman(obj.get("kalman", {})),
    )


def cmd_study(args) -> int:
    cfg = _load_config(args.config)
    dataio.validate_keys(
        cfg, _STUDY_KEYS, {"M", "T", "n", "base_seed", "generators", "fit_tasks"},
        "study config",
    )
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    T, n = int(cfg["T"]), int(cfg["n"])
    generators = tuple(
        _parse_generator(g, i) for i, g in enumerate(cfg["generators"])
    )
    tasks = tuple(_parse_task(t, i, T, n) for i, t in enumerate(cfg["fit_tasks"]))
    geometry = (
        dataio.read_geometry_csv(cfg["geometry_csv"]) if cfg.get("geometry_csv") else None
    )
    design = StudyDesign(
        generators=generators,
        fit_tasks=tasks,
        M=int(cfg["M"]),
        T=T,
        n=n,
        base_seed=int(cfg["base_seed"]),
        geometry=geometry,
        normalize_distances=bool(cfg.get("normalize_distances", True)),
    )
    result = run_study(design)
    written = emit_tables(
        result, args.out, extra_meta={"config_sha256": dataio.config_hash(cfg)}
    )
    print(f"wrote {len(written)} files under {args.out}")
    excluded = sum(result.exclusions.values())
    if excluded:
        print(f"excluded replicate fits: {excluded} (see tables/exclusions.csv)")
    return 0


# ---------------------------------------------------------------- weights

def cmd_weights(args) -> int:
    geom = dataio.read_geometry_csv(args.geometry)
    wset = build_weight_set(
        geom, args.scheme, args.alpha, normalize_distances=not args.raw_distances
    )
    W = wset.order(1)
    cfg = {
        "scheme": args.scheme,
        "alpha": args.alpha,
        "normalize_distances": not args.raw_distances,
        "geometry_sha256": dataio.sha256_file(args.geometry),
    }
    dataio.write_matrix_csv(
        args.out, W, geom.ids, {"config_sha256": dataio.config_hash(cfg)}
    )
    print(f"wrote {args.out}")
    row_sums = W.sum(axis=1)
    print("row-sum report:")
    print(f"  max |row_sum - 1| = {np.max(np.abs(row_sums - 1.0)):.3e}")
    print(f"  diagonal all zero: {bool(np.all(np.diag(W) == 0.0))}")
    print(f"  min off-diagonal weight: {W[W > 0].min():.3e}")
    print(f"  max weight: {W.max():.3e}")
    return 0


# ---------------------------------------------------------------- ingest

def cmd_ingest(args) -> int:
    start = date.fromisoformat(args.start)
    end = date.fromisoformat(args.end)
    result = dataio.ingest_panel(args.records, args.geometry, start, end)
    panel = result.panel
    if args.transform:
        panel = dataio.log10_transform(panel)
    cfg = {
        "records_sha256": dataio.sha256_file(args.records),
        "geometry_sha256": dataio.sha256_file(args.geometry),
        "start": args.start,
        "end": args.end,
        "transform": bool(args.transform),
    }
    meta = {"config_sha256": dataio.config_hash(cfg)}
    dataio.write_panel_csv(args.out, panel, meta)
    if args.out_geometry:
        dataio.write_geometry_csv(args.out_geometry, result.geometry, meta)
    print(result.report())
    print(f"wrote {args.out}")
    if args.out_geometry:
        print(f"wrote {args.out_geometry}")
    return 0


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvstarma",
        description="Time-varying space-time ARMA modelling with wavelet-expanded "
        "coefficients.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic panel CSV")
    p.add_argument("--config", required=True, help="simulate config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output panel CSV")
    p.add_argument("--out-geometry", help="also write the station geometry CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a panel")
    p.add_argument("--panel", required=True, help="panel CSV")
    p.add_argument("--geometry", required=True, help="geometry CSV")
    p.add_argument("--config", help="fit config JSON")
    p.add_argument("--method", choices=["ls", "kalman"], help="override the estimator")
    p.add_argument("--trace", help="write per-step filter trace CSV (kalman only)")
    p.add_argument("--out", required=True, help="output fit JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="run a Monte Carlo study")
    p.add_argument("--config", required=True, help="study config JSON")
    p.add_argument("--seed", type=int, help="override the config base_seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("weights", help="build a spatial weight matrix CSV")
    p.add_argument("--geometry", required=True, help="geometry CSV")
    p.add_argument(
        "--scheme", choices=list(WEIGHT_SCHEMES), default="inverse_distance"
    )
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument(
        "--raw-distances",
        action="store_true",
        help="use raw km distances instead of max-normalized ones",
    )
    p.add_argument("--out", required=True, help="output matrix CSV")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("ingest", help="clean a daily records file into a panel")
    p.add_argument("--records", required=True, help="station_id,date,value CSV")
    p.add_argument("--geometry", required=True, help="geometry CSV")
    p.add_argument("--start", required=True, help="window start (ISO date, inclusive)")
    p.add_argument("--end", required=True, help="window end (ISO date, inclusive)")
    p.add_argument("--transform", action="store_true", help="apply log10(y+1)")
    p.add_argument("--out", required=True, help="output panel CSV")
    p.add_argument("--out-geometry", help="write the kept-station geometry CSV")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
