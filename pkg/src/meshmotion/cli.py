"""Command-line pipeline around the mesh-motion operator.

Subcommands cover the full workflow: ``mesh`` (geometry to triangulation),
``datagen`` (synthetic boundary-deformation datasets with biharmonic
targets), ``train`` / ``gridsearch`` (supervised operator training),
``evaluate`` (per-snapshot quality tables and histograms), ``seedstudy``
(quantiles over random initializations) and ``compare`` (merging quality
tables from several runs).

Every command writes its artifacts into the ``--out`` directory together
with a ``manifest.json`` recording the command, the effective
configuration (flags take precedence over the ``--config`` file, which
takes precedence over built-in defaults), input file hashes, the output
list and the wall time.  With fixed inputs and seeds all CSV and
checkpoint outputs are byte-identical across repeated invocations; report
commands additionally render PNG figures next to the CSVs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._csv import read_csv, write_csv
from .data import (
    DEFAULT_STRESS_SCALE,
    OscillationFamily,
    gen_oscillation_snapshots,
    gen_stress_snapshots,
    load_dataset,
    save_dataset,
)
from .deeponet import corrected_eval, load_model_bundle
from .fem import SolverError, mask_field
from .mesh import (
    GeometryConfig,
    Mesh,
    MeshError,
    NodalField,
    generate_channel_flag_mesh,
    load_mesh,
    mesh_hash,
    save_mesh,
    validate_mesh,
)
from .quality import histogram, quality_report
from .report import (
    plot_histogram_grid,
    plot_loss_history,
    plot_quality_curves,
    plot_quantile_band,
)
from .training import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    grid_search,
    load_run_state,
    select_best,
    snapshot_quality,
    train,
    write_run_dir,
)

log = logging.getLogger(__name__)

FULL_GRID_PARAM_SPAN = (160576, 3430528)


# ---------------------------------------------------------------------------
# argument helpers


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _parse_arch(text: str) -> tuple:
    """\"depth,width,p\" (depth = activated layers) -> recurrence (L, w, p)."""
    parts = [int(x) for x in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError(f"arch must be depth,width,p — got {text!r}")
    depth, width, p = parts
    if depth < 1 or width < 1 or p < 2 or p % 2 != 0:
        raise ValueError(f"arch needs depth >= 1, width >= 1, even p >= 2 — got {text!r}")
    return (depth + 2, width, p)


def _parse_seeds(text: str) -> list:
    """Seed lists: \"0,1,5\" or an inclusive range \"0..19\"."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",")]


def _parse_floats(text: str) -> list:
    return [float(x) for x in str(text).split(",")]


def _parse_ints(text: str) -> list:
    return [int(x) for x in str(text).split(",")]


# ---------------------------------------------------------------------------
# config precedence and manifests

_DEFAULTS = {
    "mesh": {"edge_length": 0.05, "validate": True},
    "datagen": {
        "family": "oscillation",
        "count": 32,
        "amplitude": 0.07,
        "amplitude2": 0.01,
        "phase2": math.pi / 2.0,
        "levels": "1,2,2.5",
        "scale": None,
    },
    "train": {
        "epochs": 5000,
        "lr": 1e-5,
        "arch": "4,128,32",
        "activation": "tanh",
        "batch_size": None,
        "split_ratio": 0.7,
        "split_seed": 0,
        "eps": 1e-10,
        "seed": 0,
    },
    "gridsearch": {
        "epochs": 5000,
        "lr": 1e-5,
        "activation": "tanh",
        "split_ratio": 0.7,
        "split_seed": 0,
        "eps": 1e-10,
        "depths": "4,5,6,7",
        "widths": "128,256,512",
        "ps": "32,64",
        "seeds": "0,1",
        "aggregator": "worst",
        "jobs": 1,
    },
    "evaluate": {"bins": 20},
    "seedstudy": {
        "epochs": 5000,
        "lr": 1e-5,
        "arch": "4,128,32",
        "activation": "tanh",
        "split_ratio": 0.7,
        "split_seed": 0,
        "eps": 1e-10,
        "seeds": "0..19",
        "stagnation_threshold": 1e-3,
        "stagnation_window": 100,
        "jobs": 1,
    },
    "compare": {},
}


def _effective_config(args: argparse.Namespace, command: str) -> dict:
    """Merge flag > config-file > default for every tunable of a command."""
    file_cfg = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        file_cfg = doc.get(command, doc) if isinstance(doc, dict) else {}
    eff = {}
    for key, default in _DEFAULTS[command].items():
        flag = getattr(args, key, None)
        eff[key] = flag if flag is not None else file_cfg.get(key, default)
    return eff


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, effective: dict,
                    inputs: dict, outputs: list, t0: float, extra: dict | None = None) -> None:
    for rel in outputs:
        if not (out_dir / rel).exists():
            raise FileNotFoundError(f"declared output missing: {rel}")
    manifest = {
        "command": command,
        "version": __version__,
        "config": effective,
        "inputs": {name: _sha256_file(p) for name, p in inputs.items()},
        "outputs": sorted(outputs),
        "wall_time_s": time.time() - t0,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_mesh_arg(path) -> Mesh:
    mesh = load_mesh(path)
    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "mesh")
    out = _out_dir(args)
    file_cfg = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        file_cfg = doc.get("mesh", doc) if isinstance(doc, dict) else {}
    if args.default or "geometry" not in file_cfg:
        geometry = GeometryConfig()
    else:
        geometry = GeometryConfig.from_dict(file_cfg["geometry"])
    mesh = generate_channel_flag_mesh(geometry, target_edge_length=eff["edge_length"])
    if eff["validate"]:
        validate_mesh(mesh)
    save_mesh(mesh, out / "mesh.json")
    undeformed = quality_report(mesh, NodalField(2, np.zeros((mesh.num_vertices, 2))))
    sensors = mesh.marker_vertices(3).size
    print(f"mesh: {mesh.num_vertices} vertices, {mesh.num_cells} cells")
    print(f"sensors (flag-interface vertices): {sensors}")
    print(f"min scaled Jacobian (undeformed): {undeformed.min_scaled_jacobian:.6f}")
    print(f"hash: {mesh_hash(mesh)}")
    _write_manifest(
        out, "mesh", {**eff, "geometry": geometry.as_dict()}, {}, ["mesh.json"], t0,
        extra={"mesh_hash": mesh_hash(mesh)},
    )
    return 0


def cmd_datagen(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "datagen")
    out = _out_dir(args)
    mesh = _load_mesh_arg(args.mesh)
    if eff["family"] == "oscillation":
        family = OscillationFamily(
            count=eff["count"],
            amplitude=eff["amplitude"],
            amplitude2=eff["amplitude2"],
            phase2=eff["phase2"],
        )
        ds = gen_oscillation_snapshots(mesh, family)
        if len(ds) < family.count:
            print(f"warning: {family.count - len(ds)} snapshot(s) rejected as degenerate",
                  file=sys.stderr)
    elif eff["family"] == "stress":
        levels = _parse_floats(eff["levels"])
        ds = gen_stress_snapshots(mesh, levels=levels, scale=eff["scale"])
        sj = ds.family["biharmonic_min_scaled_jacobian"]
        print("biharmonic min scaled Jacobian per level: "
              + ", ".join(f"{lv:g}: {q:.4f}" for lv, q in zip(levels, sj)))
    else:
        raise ValueError(f"unknown family {eff['family']!r}")
    save_dataset(ds, out)
    outputs = ["dataset.json"]
    for s in ds.snapshots:
        outputs += [f"fields/g_{s.k:03d}.json", f"fields/u_bih_{s.k:03d}.json",
                    f"fields/h_{s.k:03d}.json"]
    print(f"{len(ds)} snapshots written to {out}")
    _write_manifest(out, "datagen", eff, {"mesh": args.mesh}, outputs, t0)
    return 0


def _train_outputs() -> list:
    return [
        "config.json", "history.csv", "quality.csv", "train_state.json", "loss.png",
        "model/branch.json", "model/trunk.json", "model/sensors.json", "model/bundle.json",
    ]


def cmd_train(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "train")
    out = _out_dir(args)
    mesh = _load_mesh_arg(args.mesh)
    ds = load_dataset(args.dataset, mesh=mesh)
    l_field = mask_field(mesh)

    if args.resume:
        for flag in ("arch", "lr", "activation", "split_ratio", "split_seed", "eps"):
            if getattr(args, flag, None) is not None:
                print(f"warning: --{flag.replace('_', '-')} is ignored with --resume "
                      "(the stored run config governs)", file=sys.stderr)
        config, model, adam, scheduler, start_epoch = load_run_state(args.resume)
        epochs_more = eff["epochs"]
        run_cfg = replace(config, epochs=start_epoch + epochs_more)
        result = train(replace(config, epochs=epochs_more), ds.snapshots, mesh, l_field,
                       model=model, adam=adam, scheduler=scheduler, start_epoch=start_epoch)
        old_rows = [
            (int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["lr"]))
            for r in read_csv(Path(args.resume) / "history.csv")
        ]
        result = TrainResult(model=result.model, history=old_rows + result.history,
                             train_ks=result.train_ks, val_ks=result.val_ks,
                             adam=result.adam, scheduler=result.scheduler)
        eff = {**eff, **run_cfg.as_dict(), "resumed_from": str(args.resume)}
        config = run_cfg
    else:
        if args.full_scale:
            arch, epochs, lr = (9, 512, 32), 40000, 1e-5
        else:
            arch, epochs, lr = _parse_arch(eff["arch"]), eff["epochs"], eff["lr"]
        config = TrainConfig(
            epochs=epochs,
            learning_rate=lr,
            arch=arch,
            activation=eff["activation"],
            seed=eff["seed"],
            split_ratio=eff["split_ratio"],
            split_seed=eff["split_seed"],
            eps=eff["eps"],
            batch_size=eff["batch_size"],
        )
        result = train(config, ds.snapshots, mesh, l_field)

    quality = snapshot_quality(result.model, ds.snapshots, mesh, l_field)
    write_run_dir(out, config, result, quality)
    if result.history:
        plot_loss_history(result.history, out / "loss.png")
        last = result.history[-1]
        print(f"epoch {last[0]}: train loss {last[1]:.6g}, validation loss {last[2]:.6g}")
    worst_gap = max(
        (q["biharmonic_min_sj"] - q["deeponet_min_sj"] for q in quality), default=float("nan")
    )
    print(f"worst quality gap to biharmonic: {worst_gap:.6f}")
    outputs = _train_outputs() if result.history else [
        o for o in _train_outputs() if o != "loss.png"
    ]
    _write_manifest(out, "train", {**eff, "arch_layers": list(config.arch)},
                    {"mesh": args.mesh, "dataset": Path(args.dataset) / "dataset.json"},
                    outputs, t0)
    return 0


def cmd_gridsearch(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "gridsearch")
    out = _out_dir(args)
    mesh = _load_mesh_arg(args.mesh)
    ds = load_dataset(args.dataset, mesh=mesh)
    l_field = mask_field(mesh)
    if args.full_grid:
        depths, widths, ps, seeds = (4, 5, 6, 7), (128, 256, 512), (32, 64), (0, 1)
    else:
        depths = tuple(_parse_ints(eff["depths"]))
        widths = tuple(_parse_ints(eff["widths"]))
        ps = tuple(_parse_ints(eff["ps"]))
        seeds = tuple(_parse_seeds(str(eff["seeds"])))
    base = TrainConfig(
        epochs=eff["epochs"],
        learning_rate=eff["lr"],
        activation=eff["activation"],
        split_ratio=eff["split_ratio"],
        split_seed=eff["split_seed"],
        eps=eff["eps"],
    )
    results = grid_search(ds.snapshots, mesh, l_field, base, depths=depths, widths=widths,
                          ps=ps, seeds=seeds, out_dir=out, jobs=eff["jobs"])

    span = (min(r.spec.param_count for r in results), max(r.spec.param_count for r in results))
    print(f"{len(results)} runs; parameter counts span {span[0]} to {span[1]}")
    if args.full_grid and span != FULL_GRID_PARAM_SPAN:
        print(
            "warning: parameter-count span differs from the expected full-grid span "
            f"({FULL_GRID_PARAM_SPAN[0]}-{FULL_GRID_PARAM_SPAN[1]}); our count per network is "
            "sum over consecutive layer pairs of (fan_out * fan_in + fan_out) with "
            "dims [in, width x (depth+1), p], summed for branch and trunk",
            file=sys.stderr,
        )

    def rank_key(r):
        if r.error is not None or not r.quality:
            return (1, float("inf"), r.spec.sort_key())
        agg = float(r.gaps().max()) if eff["aggregator"] == "worst" else float(r.gaps().mean())
        return (0, agg, r.spec.sort_key())

    ranked = sorted(results, key=rank_key)
    rows = []
    for r in ranked:
        gaps = r.gaps() if r.quality else np.array([])
        rows.append((
            r.spec.run_id, r.spec.depth, r.spec.width, r.spec.p, r.spec.seed,
            r.spec.param_count,
            r.final_train_loss, r.final_val_loss,
            float(gaps.max()) if gaps.size else float("nan"),
            float(gaps.mean()) if gaps.size else float("nan"),
            r.error or "",
        ))
    write_csv(out / "ranking.csv",
              ["run_id", "depth", "width", "p", "seed", "param_count", "final_train_loss",
               "final_val_loss", "worst_gap", "mean_gap", "error"],
              rows)
    best = select_best(results, aggregator=eff["aggregator"])
    best_doc = {
        "run_id": best.spec.run_id,
        "depth": best.spec.depth,
        "width": best.spec.width,
        "p": best.spec.p,
        "seed": best.spec.seed,
        "param_count": best.spec.param_count,
        "worst_gap": float(best.gaps().max()),
        "mean_gap": float(best.gaps().mean()),
        "final_val_loss": best.final_val_loss,
        "aggregator": eff["aggregator"],
    }
    (out / "best.json").write_text(json.dumps(best_doc, indent=2), encoding="utf-8")
    print(f"best run: {best.spec.run_id} "
          f"(worst gap {best_doc['worst_gap']:.6f}, val loss {best.final_val_loss:.6g})")
    failures = [r.spec.run_id for r in results if r.error is not None]
    if failures:
        print(f"failed runs: {', '.join(failures)}", file=sys.stderr)
    _write_manifest(out, "gridsearch", {**eff, "full_grid": bool(args.full_grid)},
                    {"mesh": args.mesh, "dataset": Path(args.dataset) / "dataset.json"},
                    ["ranking.csv", "best.json"], t0,
                    extra={"run_dirs": [r.spec.run_id for r in results]})
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "evaluate")
    out = _out_dir(args)
    mesh = _load_mesh_arg(args.mesh)
    ds = load_dataset(args.dataset, mesh=mesh)
    inputs = {"mesh": args.mesh, "dataset": Path(args.dataset) / "dataset.json"}

    operators = ["biharmonic"]
    model = None
    if args.model:
        model = load_model_bundle(args.model)
        if model.mesh_hash != mesh_hash(mesh):
            raise MeshError("model was trained on a different mesh (hash mismatch)")
        operators.append("deeponet")
        inputs["model"] = Path(args.model) / "bundle.json"
        l_field = mask_field(mesh)

    edges = np.linspace(0.0, 1.0, eff["bins"] + 1)
    snaps = sorted(ds.snapshots, key=lambda s: s.k)
    rows = []
    hists = []
    outputs = ["quality.csv", "quality.png", "histograms.png"]
    curve = {op: ([], []) for op in operators}
    for s in snaps:
        reports = {"biharmonic": quality_report(mesh, s.u_bih)}
        if model is not None:
            U = corrected_eval(model, s.g, mesh, s.h, l_field)
            reports["deeponet"] = quality_report(mesh, U)
        for op in operators:
            rep = reports[op]
            rows.append((s.k, op, rep.min_scaled_jacobian, rep.min_det_gradient))
            curve[op][0].append(s.k)
            curve[op][1].append(rep.min_scaled_jacobian)
            counts, _ = histogram(rep.scaled_jacobians, edges)
            name = f"histogram_s{s.k:03d}_{op}.csv"
            write_csv(out / name, ["bin_left", "bin_right", "count"],
                      list(zip(edges[:-1], edges[1:], counts)))
            outputs.append(name)
            hists.append({"title": f"snapshot {s.k}, {op}", "edges": edges, "counts": counts})
        line = f"snapshot {s.k}: biharmonic min SJ {reports['biharmonic'].min_scaled_jacobian:.4f}"
        if model is not None:
            line += f", deeponet min SJ {reports['deeponet'].min_scaled_jacobian:.4f}"
        print(line)
    write_csv(out / "quality.csv",
              ["snapshot", "operator", "min_scaled_jacobian", "min_detJ"], rows)
    plot_quality_curves({op: curve[op] for op in operators}, out / "quality.png")
    plot_histogram_grid(hists, out / "histograms.png", ncols=len(operators))
    _write_manifest(out, "evaluate", {**eff, "operators": operators}, inputs, outputs, t0)
    return 0


def cmd_seedstudy(args) -> int:
    t0 = time.time()
    eff = _effective_config(args, "seedstudy")
    out = _out_dir(args)
    mesh = _load_mesh_arg(args.mesh)
    ds = load_dataset(args.dataset, mesh=mesh)
    l_field = mask_field(mesh)
    seeds = _parse_seeds(str(eff["seeds"]))
    arch = _parse_arch(eff["arch"])

    def run_one(seed: int):
        config = TrainConfig(
            epochs=eff["epochs"], learning_rate=eff["lr"], arch=arch,
            activation=eff["activation"], seed=seed, split_ratio=eff["split_ratio"],
            split_seed=eff["split_seed"], eps=eff["eps"],
        )
        result = train(config, ds.snapshots, mesh, l_field)
        quality = snapshot_quality(result.model, ds.snapshots, mesh, l_field)
        return result, quality

    if eff["jobs"] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=eff["jobs"]) as pool:
            outcomes = list(pool.map(run_one, seeds))
    else:
        outcomes = [run_one(seed) for seed in seeds]

    val = np.array([[row[2] for row in res.history] for res, _ in outcomes])  # (S, E)
    epochs_axis = [row[0] for row in outcomes[0][0].history]
    q10, q50, q90 = np.quantile(val, [0.1, 0.5, 0.9], axis=0)
    write_csv(out / "loss_quantiles.csv", ["epoch", "q10", "q50", "q90"],
              list(zip(epochs_axis, q10, q50, q90)))
    plot_quantile_band(epochs_axis, q10, q50, q90, out / "loss_quantiles.png",
                       "epoch", "validation loss", logy=True)

    ks = [row["k"] for row in outcomes[0][1]]
    dq = np.array([[row["deeponet_min_sj"] for row in quality] for _, quality in outcomes])
    bq = [row["biharmonic_min_sj"] for row in outcomes[0][1]]
    k10, k50, k90 = np.quantile(dq, [0.1, 0.5, 0.9], axis=0)
    write_csv(out / "quality_quantiles.csv",
              ["k", "q10", "q50", "q90", "biharmonic_min_sj"],
              list(zip(ks, k10, k50, k90, bq)))
    plot_quantile_band(ks, k10, k50, k90, out / "quality_quantiles.png",
                       "snapshot", "min scaled Jacobian",
                       reference=bq, reference_label="biharmonic")

    window = min(eff["stagnation_window"], len(epochs_axis))
    stag_rows = []
    flagged = []
    for seed, (res, _) in zip(seeds, outcomes):
        first = res.history[0][2]
        at_window = res.history[window - 1][2]
        improvement = (first - at_window) / first if first != 0 else 0.0
        stagnated = improvement < eff["stagnation_threshold"]
        stag_rows.append((seed, first, at_window, improvement, stagnated))
        if stagnated:
            flagged.append(seed)
    write_csv(out / "stagnation.csv",
              ["seed", "initial_val_loss", "val_loss_at_window", "relative_improvement",
               "stagnated"],
              stag_rows)
    print(f"{len(seeds)} seeds; stagnated within {window} epochs: "
          f"{', '.join(map(str, flagged)) if flagged else 'none'}")
    _write_manifest(out, "seedstudy", {**eff, "seed_list": seeds},
                    {"mesh": args.mesh, "dataset": Path(args.dataset) / "dataset.json"},
                    ["loss_quantiles.csv", "quality_quantiles.csv", "stagnation.csv",
                     "loss_quantiles.png", "quality_quantiles.png"], t0)
    return 0


def cmd_compare(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    if len(args.inputs) < 2:
        raise ValueError("compare needs at least two quality.csv files")
    if args.labels:
        labels = [s.strip() for s in str(args.labels).split(",")]
        if len(labels) != len(args.inputs):
            raise ValueError(
                f"{len(labels)} labels for {len(args.inputs)} inputs"
            )
    else:
        labels = [Path(p).resolve().parent.name for p in args.inputs]

    rows = []
    series = {}
    for label, path in zip(labels, args.inputs):
        for rec in read_csv(path):
            rows.append((label, int(rec["snapshot"]), rec["operator"],
                         float(rec["min_scaled_jacobian"]), float(rec["min_detJ"])))
            key = f"{label}: {rec['operator']}"
            series.setdefault(key, ([], []))
            series[key][0].append(int(rec["snapshot"]))
            series[key][1].append(float(rec["min_scaled_jacobian"]))
    write_csv(out / "compare.csv",
              ["label", "snapshot", "operator", "min_scaled_jacobian", "min_detJ"], rows)
    plot_quality_curves(series, out / "compare.png")
    print(f"merged {len(args.inputs)} quality tables, {len(rows)} rows")
    _write_manifest(out, "compare", {"labels": labels},
                    {f"input{i}": p for i, p in enumerate(args.inputs)},
                    ["compare.csv", "compare.png"], t0)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="JSON config file (flags take precedence)")
    common.add_argument("--jobs", type=_positive_int, default=None,
                        help="worker count for parallel commands")
    common.add_argument("--seed", type=int, default=None, help="initialization seed")

    parser = argparse.ArgumentParser(
        prog="meshmotion",
        description="Learned mesh motion with exact Dirichlet boundary conditions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", parents=[common],
                       help="generate the channel-with-flag triangulation")
    p.add_argument("--edge-length", dest="edge_length", type=_positive_float, default=None)
    p.add_argument("--default", action="store_true",
                   help="force the default geometry, ignoring any config override")
    p.set_defaults(handler=cmd_mesh)

    p = sub.add_parser("datagen", parents=[common],
                       help="generate a supervised boundary-deformation dataset")
    p.add_argument("--mesh", required=True, help="mesh JSON file")
    p.add_argument("--family", choices=("oscillation", "stress"), default=None)
    p.add_argument("--count", type=_positive_int, default=None,
                   help="snapshots per period (oscillation family)")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--amplitude2", type=float, default=None)
    p.add_argument("--phase2", type=float, default=None)
    p.add_argument("--levels", default=None, help="comma-separated stress levels")
    p.add_argument("--scale", type=_positive_float, default=None,
                   help=f"stress deflection scale (default {DEFAULT_STRESS_SCALE})")
    p.set_defaults(handler=cmd_datagen)

    p = sub.add_parser("train", parents=[common], help="train the constrained operator")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--mesh", required=True, help="mesh JSON file")
    p.add_argument("--epochs", type=_nonneg_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--arch", default=None,
                   help="depth,width,p — depth counts activated layers")
    p.add_argument("--activation", choices=("tanh", "relu"), default=None)
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int, default=None)
    p.add_argument("--split-ratio", dest="split_ratio", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.add_argument("--eps", type=_positive_float, default=None)
    p.add_argument("--resume", default=None,
                   help="run directory to continue; --epochs counts additional epochs")
    p.add_argument("--full-scale", dest="full_scale", action="store_true",
                   help="depth 7, width 512, p 32, 40000 epochs, lr 1e-5")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("gridsearch", parents=[common],
                       help="train a hyperparameter grid and rank by quality gap")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--epochs", type=_nonneg_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--activation", choices=("tanh", "relu"), default=None)
    p.add_argument("--split-ratio", dest="split_ratio", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.add_argument("--eps", type=_positive_float, default=None)
    p.add_argument("--depths", default=None, help="comma-separated depths")
    p.add_argument("--widths", default=None)
    p.add_argument("--ps", default=None, help="comma-separated basis sizes")
    p.add_argument("--seeds", default=None, help="\"0,1\" or \"0..19\"")
    p.add_argument("--aggregator", choices=("worst", "mean"), default=None)
    p.add_argument("--full-grid", dest="full_grid", action="store_true",
                   help="depths 4-7, widths 128/256/512, p 32/64, seeds 0/1 (48 runs)")
    p.set_defaults(handler=cmd_gridsearch)

    p = sub.add_parser("evaluate", parents=[common],
                       help="per-snapshot mesh quality of the extension operators")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--model", default=None, help="model bundle directory (run/model)")
    p.add_argument("--bins", type=_positive_int, default=None,
                   help="histogram bin count on [0, 1]")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("seedstudy", parents=[common],
                       help="loss/quality quantiles over many initialization seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--epochs", type=_nonneg_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--arch", default=None)
    p.add_argument("--activation", choices=("tanh", "relu"), default=None)
    p.add_argument("--split-ratio", dest="split_ratio", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.add_argument("--eps", type=_positive_float, default=None)
    p.add_argument("--seeds", default=None, help="\"0..19\" or comma list")
    p.add_argument("--stagnation-threshold", dest="stagnation_threshold",
                   type=_positive_float, default=None)
    p.add_argument("--stagnation-window", dest="stagnation_window",
                   type=_positive_int, default=None)
    p.set_defaults(handler=cmd_seedstudy)

    p = sub.add_parser("compare", parents=[common],
                       help="merge quality tables from several evaluations")
    p.add_argument("--inputs", nargs="+", required=True, help="quality.csv files")
    p.add_argument("--labels", default=None, help="comma-separated labels, one per input")
    p.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (MeshError, SolverError, TrainingDiverged, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
