"""Command-line entry point: ``gumbel-prune {train,prune,report,sweep,gen-data}``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment, persist
from .config import ConfigError, load_config, parse_config
from .data import IdxError, SyntheticSpec, gen_synthetic, synthetic_csv_rows
from .interpret import (
    extract_pathways,
    importance_heatmap,
    input_output_importance,
    pattern_probe,
    symmetry_signatures,
    top_inputs,
)
from .persist import FormatError, atomic_write, config_hash, csv_text, dumps
from .training import NumericAbort, finalize

log = logging.getLogger("gumbel_prune")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _summary(report, cfg_dict: dict, extra: dict | None = None) -> dict:
    out = {"config_hash": config_hash(cfg_dict)}
    out.update({k: experiment.finite_or_none(v) for k, v in report.summary().items()})
    out["final_epoch"] = {
        k: experiment.finite_or_none(v) for k, v in vars(report.epochs[-1]).items()
    } if report.epochs else None
    if extra:
        out.update(extra)
    out["config"] = cfg_dict
    return out


def _write_all(files: dict[Path, str]) -> None:
    """Write prepared artifacts; each file lands atomically."""
    for path, text in files.items():
        atomic_write(path, text)


def _out_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return cfg.resolve(cfg.output)


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train = experiment.with_seed(cfg.train, args.seed)
        cfg.seeds = [args.seed]
    return cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    train, test = experiment.load_task(cfg)
    seed = cfg.train.seed
    if cfg.mode == "random":
        net, report = experiment.run_random(cfg, train, test, seed, cfg.baseline_density)
    else:
        net, report = experiment.run_gumbel(cfg, train, test, seed)
    cfg_dict = cfg.to_dict()
    h = config_hash(cfg_dict)
    out = _out_dir(args, cfg)
    files = {
        out / "checkpoint.json": persist.dumps(
            persist.checkpoint_dict(net, cfg.train, epoch=len(report.epochs), config=cfg_dict)),
        out / "summary.json": dumps(_summary(report, cfg_dict, {"mode": cfg.mode})),
    }
    if cfg.exports.get("report", True):
        files[out / "report.csv"] = persist.report_csv(report, h)
    _write_all(files)
    print(f"retained {report.retained_count}/{report.n_gates} connections "
          f"(density {report.pruned_density:.6f}), test accuracy {report.test_accuracy:.4f}")
    return EXIT_OK


def cmd_prune(args) -> int:
    net, env = persist.load_checkpoint(args.checkpoint)
    pruned = finalize(net)
    cfg_dict = env.get("config")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    summary = {
        "config_hash": env.get("config_hash"),
        "n_gates": pruned.n_gates,
        "retained_count": pruned.retained_count,
        "density": pruned.density,
        "layer_densities": pruned.layer_densities,
    }
    _write_all({
        out / "pruned.json": dumps(persist.pruned_dict(pruned, cfg_dict)),
        out / "prune_summary.json": dumps(summary),
    })
    print(f"retained {pruned.retained_count}/{pruned.n_gates} connections (density {pruned.density:.6f})")
    return EXIT_OK


def _grid_dims(spec: str | None, n_inputs: int, cfg_dict: dict | None) -> tuple[int, int]:
    if spec and spec != "auto":
        r, c = (int(v) for v in spec.lower().split("x"))
        return r, c
    if cfg_dict and cfg_dict.get("task", {}).get("kind") == "mnist":
        return 28, 28
    side = int(round(np.sqrt(n_inputs)))
    if side * side == n_inputs:
        return side, side
    return 1, n_inputs


def cmd_report(args) -> int:
    pruned, env = persist.load_pruned(args.pruned)
    h = env.get("config_hash")
    cfg_dict = env.get("config")
    dataset = None
    if args.config:
        cfg = load_config(args.config)
        _, dataset = experiment.load_task(cfg)
        cfg_dict = cfg.to_dict()
    elif args.probe is not None and cfg_dict:
        cfg = parse_config(_raw_from_echo(cfg_dict), base_dir=Path.cwd())
        _, dataset = experiment.load_task(cfg)
    if dataset is not None and dataset.p != pruned.specs[0].input_size:
        raise ConfigError(f"dataset has {dataset.p} features, pruned network expects {pruned.specs[0].input_size}")
    # --probe 0 is a valid request, so test identity rather than truthiness
    chosen = {k: getattr(args, k) for k in ("dot", "heatmap", "importance", "probe", "symmetry")}
    wanted = {k for k, v in chosen.items() if v is not None and v is not False}
    if not wanted:
        wanted = {"dot", "importance", "symmetry"}
    out = Path(args.out) if args.out else Path(args.pruned).parent
    names = dataset.feature_names if dataset is not None else None
    I = input_output_importance(pruned)
    graph = extract_pathways(pruned, names)
    files: dict[Path, str] = {}
    if "importance" in wanted:
        header = ["input"] + [f"y{j + 1}" for j in range(I.shape[1])]
        rows = [[(names[i] if names else f"x{i + 1}"), *I[i]] for i in range(I.shape[0])]
        files[out / "importance.csv"] = csv_text(header, rows, h)
    if "heatmap" in wanted:
        dims = _grid_dims(args.heatmap if isinstance(args.heatmap, str) else None, I.shape[0], cfg_dict)
        grid = importance_heatmap(I, dims)
        files[out / "heatmap.csv"] = csv_text([f"c{c}" for c in range(dims[1])], grid.tolist(), h)
    if "dot" in wanted:
        files[out / "pathways.dot"] = f"// config_hash={h}\n" + graph.to_dot()
        files[out / "pathways.json"] = dumps({"config_hash": h, **graph.to_json()})
    if "symmetry" in wanted:
        groups = symmetry_signatures(graph)
        files[out / "symmetry.json"] = dumps({
            "config_hash": h,
            "groups": [[f"x{i + 1}" for i in g] for g in groups],
        })
    if "probe" in wanted:
        if dataset is None:
            raise ConfigError("--probe needs a dataset (pass --config or train from a config)")
        target = int(args.probe)
        pixels = ([int(v) for v in args.probe_pixels.split(",")] if args.probe_pixels
                  else top_inputs(I, target, 2))
        res = pattern_probe(dataset, pixels, target, args.binarize_threshold)
        files[out / "probe.json"] = dumps({"config_hash": h, **res.to_json()})
        print(f"probe pixels {res.pixels} -> label {target}: support {res.support}, "
              f"accuracy {res.accuracy if res.defined else 'undefined'}")
    _write_all(files)
    for path in files:
        print(path)
    return EXIT_OK


def _raw_from_echo(cfg_dict: dict) -> dict:
    """Rebuild a parseable config mapping from an echoed normalised config."""
    return {
        "task": cfg_dict["task"],
        "network": {"layers": cfg_dict["layer_sizes"], "init_retain_prob": cfg_dict["init_retain_prob"]},
        "train": cfg_dict["train"],
        "mode": cfg_dict.get("mode", "gumbel"),
        "seeds": cfg_dict.get("seeds", []),
    }


def cmd_sweep(args) -> int:
    cfg = _load(args)
    densities = [float(v) for v in args.densities.split(",")]
    if any(not 0 < d <= 1 for d in densities):
        raise ConfigError("densities must lie in (0, 1]")
    seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else cfg.seeds
    train, test = experiment.load_task(cfg)
    rows = experiment.sweep(cfg, train, test, densities, seeds)
    cfg_dict = {**cfg.to_dict(), "sweep": {"densities": densities, "seeds": seeds}}
    h = config_hash(cfg_dict)
    out = _out_dir(args, cfg)
    header = ["density", "method", "seed", "accuracy", "retained_count"]
    _write_all({
        out / "sweep.csv": csv_text(header, [[r[k] for k in header] for r in rows], h),
        out / "sweep.json": dumps({"config_hash": h, "rows": rows, "config": cfg_dict}),
    })
    for r in rows:
        print(f"{r['density']:.4f} {r['method']:>6} seed {r['seed']}: accuracy {r['accuracy']:.4f} "
              f"({r['retained_count']} connections)")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.scenario, args.n, args.noise_std, args.seed if args.seed is not None else 0)
    ds = gen_synthetic(spec)
    header, mat = synthetic_csv_rows(ds)
    rows = [[*(float(v) for v in r[: ds.p]), *(int(v) for v in r[ds.p:])] for r in mat]
    atomic_write(args.out, csv_text(header, rows))
    print(f"wrote {ds.n} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gumbel-prune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a gated network from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("prune", help="finalise a checkpoint into a pruned network")
    pr.add_argument("checkpoint")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_prune)

    r = sub.add_parser("report", help="importance, pathway and probe exports for a pruned network")
    r.add_argument("pruned")
    r.add_argument("--config", help="dataset descriptor (defaults to the config echoed in the artifact)")
    r.add_argument("--out")
    r.add_argument("--dot", action="store_true", help="pathway graph as DOT and JSON")
    r.add_argument("--heatmap", nargs="?", const="auto", help="per-input importance grid, e.g. 28x28")
    r.add_argument("--importance", action="store_true", help="input-by-output importance CSV")
    r.add_argument("--symmetry", action="store_true", help="input symmetry partition JSON")
    r.add_argument("--probe", type=int, metavar="LABEL", help="pattern probe for an output label")
    r.add_argument("--probe-pixels", help="comma-separated input indices (default: top-2 for LABEL)")
    r.add_argument("--binarize-threshold", type=float, default=0.0)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", help="gumbel vs random-mask accuracy across densities")
    s.add_argument("--config", required=True)
    s.add_argument("--densities", required=True, help="comma-separated, e.g. 0.01,0.02,0.05")
    s.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-data", help="write a synthetic pathway dataset as CSV")
    g.add_argument("--scenario", default="independence", choices=["independence", "sharing", "irrelevance"])
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--noise-std", type=float, default=0.0)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, IdxError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
