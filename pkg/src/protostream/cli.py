"""Command-line entry point.

Subcommands: ``simulate`` (run a joint/decoupled experiment or an ablation
grid), ``analyze`` (epsilon sweep and angular statistics of a prototype
file), ``export-kde`` (PCA + planar and angular density CSVs), and
``cluster-stream`` (standalone streaming mixture over a feature file).

Every command accepts ``--seed`` and is bitwise reproducible under it.  Exit
codes: 0 success, 2 user error, 3 I/O failure, 4 degenerate data.  A JSON
run manifest is written next to the outputs on success and failure alike.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DegenerateRankError, export_prototype_kde
from .checkpoint import CheckpointError, load_matrix, save_checkpoint
from .collapse import (
    DEFAULT_EPSILON_GRID,
    angular_stats,
    epsilon_sweep,
    normalize_rows,
    write_angular_csv,
    write_reports_csv,
)
from .mixture import (
    DegenerateComponentError,
    GmmConfig,
    gmm_update,
    init_mixture,
    log_likelihood,
)
from .simulate import ConfigError, run_experiment, sim_config_from_text, sim_config_to_mapping

EXIT_OK = 0
EXIT_USER = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4

ABLATION_TOGGLES = ("forgetting", "annealing", "resurrect", "rescaling")


def _write_manifest(path: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _run_with_manifest(manifest_path: Path, info: dict, body) -> int:
    """Run a command body, always writing the manifest before returning."""
    started = time.time()
    status, error, code = "ok", None, EXIT_OK
    outputs: list = []
    try:
        outputs = body() or []
    except ConfigError as err:
        status, error, code = "error", str(err), EXIT_USER
    except (CheckpointError, ValueError) as err:
        status, error, code = "error", str(err), EXIT_USER
    except (DegenerateRankError, DegenerateComponentError) as err:
        status, error, code = "error", str(err), EXIT_DEGENERATE
    except OSError as err:
        status, error, code = "error", str(err), EXIT_IO
    info.update(
        status=status,
        error=error,
        exit_code=code,
        wall_clock_s=round(time.time() - started, 3),
        outputs=[str(p) for p in outputs],
    )
    try:
        _write_manifest(manifest_path, info)
    except OSError as err:
        print(f"error: cannot write manifest: {err}", file=sys.stderr)
        return EXIT_IO
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
    return code


def _simulate_one(args_tuple):
    """Worker for grid fan-out; module-level so process pools can pickle it."""
    config_text, overrides, seed, out_dir = args_tuple
    config = sim_config_from_text(config_text)
    gmm = replace(
        config.gmm,
        responsibility_forgetting=overrides.get("forgetting",
                                                config.gmm.responsibility_forgetting),
        annealing=overrides.get("annealing", config.gmm.annealing),
        resurrect=overrides.get("resurrect", config.gmm.resurrect),
        rescaling=overrides.get("rescaling", config.gmm.rescaling),
    )
    config = replace(config, gmm=gmm)
    if seed is not None:
        config = replace(config, seed=seed)
    result = run_experiment(config, out_dir=out_dir)
    return config, result


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    manifest = out_dir / "manifest.json"
    info = {"command": "simulate", "config_path": str(args.config),
            "seed": args.seed, "grid": bool(args.grid)}

    def body():
        config_text = Path(args.config).read_text()
        outputs = []
        if not args.grid:
            config, result = _simulate_one((config_text, {}, args.seed, out_dir))
            info["config"] = sim_config_to_mapping(config)
            info["epochs_logged"] = len(result.telemetry)
            outputs.append(result.telemetry_path)
            outputs.extend(result.snapshot_paths)
            return outputs
        combos = list(itertools.product((False, True), repeat=len(ABLATION_TOGGLES)))
        jobs = []
        for values in combos:
            overrides = dict(zip(ABLATION_TOGGLES, values))
            name = "_".join(f"{k[:3]}{int(v)}" for k, v in overrides.items())
            jobs.append((config_text, overrides, args.seed, out_dir / name))
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(_simulate_one, jobs))
        else:
            results = [_simulate_one(job) for job in jobs]
        info["config"] = sim_config_to_mapping(results[0][0])
        info["grid_runs"] = [str(job[3]) for job in jobs]
        for (_, result), job in zip(results, jobs):
            outputs.append(result.telemetry_path)
        return outputs

    return _run_with_manifest(manifest, info, body)


def _parse_epsilons(text: str):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError("epsilons", f"not a number list: {text!r}") from None
    if not values:
        raise ConfigError("epsilons", "empty epsilon list")
    return values


def cmd_analyze(args) -> int:
    out_csv = Path(args.out)
    manifest = Path(str(out_csv) + ".manifest.json")
    info = {"command": "analyze", "protos_path": str(args.protos),
            "seed": args.seed}

    def body():
        epsilons = _parse_epsilons(args.epsilons)
        rows = load_matrix(args.protos)
        protos = normalize_rows(rows)
        reports = epsilon_sweep(protos, epsilons)
        write_reports_csv(reports, out_csv)
        outputs = [out_csv]
        info["epsilons"] = epsilons
        info["prototype_count"] = protos.k
        info["unique_counts"] = {str(r.epsilon): r.unique_count for r in reports}
        if protos.k >= 2:
            stats = angular_stats(protos)
            angles_csv = out_csv.with_name(out_csv.stem + "_angles.csv")
            write_angular_csv(stats, angles_csv)
            outputs.append(angles_csv)
            info["min_angle_deg"] = stats.min_deg
            info["mean_angle_deg"] = stats.mean_deg
            info["pairs_used"] = stats.n_pairs_used
            info["pairs_subsampled"] = stats.subsampled
        return outputs

    return _run_with_manifest(manifest, info, body)


def cmd_export_kde(args) -> int:
    prefix = Path(args.out_prefix)
    manifest = Path(str(prefix) + "_manifest.json")
    info = {"command": "export-kde", "protos_path": str(args.protos),
            "kappa": args.kappa, "seed": args.seed}

    def body():
        rows = load_matrix(args.protos)
        result = export_prototype_kde(rows, prefix, kappa=args.kappa,
                                      normalize=not args.raw)
        info["explained_variance"] = list(result["explained_variance"])
        info["bandwidth"] = list(result["bandwidth"])
        return [result["gaussian_csv"], result["vmf_csv"]]

    return _run_with_manifest(manifest, info, body)


def cmd_cluster_stream(args) -> int:
    out_ckpt = Path(args.out)
    manifest = Path(str(out_ckpt) + ".manifest.json")
    info = {"command": "cluster-stream", "features_path": str(args.features),
            "seed": args.seed, "components": args.components,
            "batch_size": args.batch_size, "epochs": args.epochs}

    def body():
        features = load_matrix(args.features)
        n, dim = features.shape
        batches_per_epoch = max(1, -(-n // args.batch_size))
        config = GmmConfig(
            total_steps=max(1, args.epochs * batches_per_epoch),
            eta_start=args.eta_start,
            eta_end=args.eta_end,
            beta=args.beta,
            annealing=not args.no_annealing,
            responsibility_forgetting=not args.no_forgetting,
            resurrect=not args.no_resurrect,
            rescaling=not args.no_rescaling,
            resurrect_threshold=args.resurrect_threshold,
            rng_seed=args.seed or 0,
            init_variance=(1.0 if args.init_variance is None
                           else args.init_variance),
        )
        rng = np.random.default_rng([config.rng_seed, 1])
        state = init_mixture(args.components, dim, init_points=features,
                             config=config, rng=rng)
        ll_rows = []
        for epoch in range(args.epochs):
            order = np.random.default_rng([config.rng_seed, 2, epoch]).permutation(n)
            for start in range(0, n, args.batch_size):
                batch = features[order[start:start + args.batch_size]]
                ll_rows.append((state.step, log_likelihood(state, batch)))
                state = gmm_update(state, batch, config)
        save_checkpoint(state, out_ckpt)
        ll_path = Path(str(out_ckpt) + ".loglik.csv")
        with open(ll_path, "w") as fh:
            fh.write("step,avg_loglik\n")
            for step, ll in ll_rows:
                fh.write(f"{step},{ll:.17g}\n")
        info["final_avg_loglik"] = ll_rows[-1][1] if ll_rows else None
        info["steps"] = state.step
        return [out_ckpt, ll_path]

    return _run_with_manifest(manifest, info, body)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protostream",
        description="Streaming prototype estimation, collapse diagnostics, "
                    "and joint-vs-decoupled simulation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the experiment seed")

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="run a simulator experiment from a config file")
    p_sim.add_argument("--config", required=True, help="key=value config file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--grid", action="store_true",
                       help="run all 16 mixture-toggle combinations, one "
                            "sub-directory each")
    p_sim.add_argument("--workers", type=int, default=1,
                       help="parallel workers for --grid")
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", parents=[common],
                          help="epsilon sweep and angular stats of a prototype file")
    p_an.add_argument("--protos", required=True,
                      help="checkpoint or CSV prototype matrix")
    p_an.add_argument("--out", required=True, help="output CSV path")
    p_an.add_argument("--epsilons",
                      default=",".join(str(e) for e in DEFAULT_EPSILON_GRID),
                      help="comma-separated ascending epsilon grid")
    p_an.set_defaults(func=cmd_analyze)

    p_kde = sub.add_parser("export-kde", parents=[common],
                           help="PCA projection and KDE CSV exports")
    p_kde.add_argument("--protos", required=True)
    p_kde.add_argument("--out-prefix", required=True)
    p_kde.add_argument("--kappa", type=float, default=20.0,
                       help="von Mises-Fisher concentration")
    p_kde.add_argument("--raw", action="store_true",
                       help="skip row normalization before PCA")
    p_kde.set_defaults(func=cmd_export_kde)

    p_cs = sub.add_parser("cluster-stream", parents=[common],
                          help="stream a feature file through the mixture")
    p_cs.add_argument("--features", required=True,
                      help="CSV (d0..dN header) or checkpoint feature file")
    p_cs.add_argument("--out", required=True, help="output checkpoint path")
    p_cs.add_argument("--components", "-k", type=int, default=8)
    p_cs.add_argument("--batch-size", type=int, default=64)
    p_cs.add_argument("--epochs", type=int, default=20)
    p_cs.add_argument("--eta-start", type=float, default=0.1)
    p_cs.add_argument("--eta-end", type=float, default=0.5)
    p_cs.add_argument("--beta", type=float, default=1.0)
    p_cs.add_argument("--resurrect-threshold", type=float, default=0.3)
    p_cs.add_argument("--init-variance", type=float, default=None,
                      help="override the unit initial variances")
    p_cs.add_argument("--no-annealing", action="store_true")
    p_cs.add_argument("--no-forgetting", action="store_true")
    p_cs.add_argument("--no-resurrect", action="store_true")
    p_cs.add_argument("--no-rescaling", action="store_true")
    p_cs.set_defaults(func=cmd_cluster_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
