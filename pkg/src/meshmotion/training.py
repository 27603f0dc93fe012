"""Supervised training of the constrained operator against biharmonic targets.

The cost averages, over snapshots, the squared residual of the corrected
prediction h + l*D against the biharmonic displacement, pointwise divided
by the squared residual of the harmonic lift alone (plus a small epsilon
where that residual vanishes).  A value of 1 per term therefore means "no
better than the plain harmonic extension"; training pushes terms toward 0.

Batches are internally sorted by snapshot id and reduced in fixed order,
so the loss is invariant under reordering of its input and two runs from
the same seeds produce bit-identical trajectories.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._csv import write_csv
from .deeponet import (
    DeepONetModel,
    corrected_eval,
    encode_boundary,
    init_deeponet,
    load_model_bundle,
    save_model_bundle,
)
from .mesh import BoundaryDeformation, Mesh, NodalField
from .neural import (
    AdamState,
    PlateauScheduler,
    adam_step,
    backward_batch,
    forward_batch,
    parameter_count,
)
from .quality import quality_report

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class Snapshot:
    """One supervised pair: boundary data, biharmonic target, harmonic lift."""

    k: int
    g: BoundaryDeformation
    u_bih: NodalField
    h: NodalField


@dataclass
class TrainConfig:
    epochs: int = 5000
    learning_rate: float = 1e-5
    arch: tuple = (4, 128, 32)  # (num_layers, width, p)
    activation: str = "tanh"
    seed: int = 0
    split_ratio: float = 0.7
    split_seed: int = 0
    eps: float = 1e-10
    batch_size: int | None = None  # None = full batch
    scheduler_factor: float = 0.5
    scheduler_patience: int = 10
    scheduler_threshold: float = 1e-4
    scheduler_min_lr: float = 0.0

    def __post_init__(self):
        self.arch = tuple(int(a) for a in self.arch)
        if len(self.arch) != 3 or self.arch[0] < 2 or self.arch[2] % 2 != 0 or self.arch[2] < 2:
            raise ValueError(f"arch must be (L >= 2, width, even p >= 2), got {self.arch}")
        if self.epochs < 0 or self.learning_rate < 0.0:
            raise ValueError("epochs and learning rate must be non-negative")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split ratio {self.split_ratio} must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be at least 1")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "arch": list(self.arch),
            "activation": self.activation,
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "split_seed": self.split_seed,
            "eps": self.eps,
            "batch_size": self.batch_size,
            "scheduler_factor": self.scheduler_factor,
            "scheduler_patience": self.scheduler_patience,
            "scheduler_threshold": self.scheduler_threshold,
            "scheduler_min_lr": self.scheduler_min_lr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["arch"] = tuple(d["arch"])
        return cls(**d)


def split_dataset(snapshots, ratio: float, seed: int):
    """Deterministic shuffle split; the train share is floor(ratio * N).

    Both halves come back sorted by snapshot id.  Raises when either
    partition would be empty.
    """
    snaps = sorted(snapshots, key=lambda s: s.k)
    n = len(snaps)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    perm = rng.permutation(n)
    n_train = int(np.floor(ratio * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} snapshots at ratio {ratio} leaves an empty partition"
        )
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:])
    return [snaps[i] for i in train_idx], [snaps[i] for i in val_idx]


# ---------------------------------------------------------------------------
# loss


def _batch_arrays(snapshots, model: DeepONetModel, mesh: Mesh, l_field: NodalField,
                  eps: float, vertices=None) -> dict:
    """Precompute every training array for a batch, sorted by snapshot id."""
    snaps = sorted(snapshots, key=lambda s: s.k)
    if not snaps:
        raise ValueError("empty batch")
    if vertices is None:
        idx = np.arange(mesh.num_vertices)
    else:
        idx = np.asarray(vertices, dtype=np.int64).reshape(-1)
    G = np.stack([encode_boundary(s.g, model.layout) for s in snaps])
    H = np.stack([s.h.values[idx] for s in snaps])
    U = np.stack([s.u_bih.values[idx] for s in snaps])
    den = (H - U) ** 2 + eps
    return {
        "ks": np.array([s.k for s in snaps], dtype=np.int64),
        "G": G,
        "H": H,
        "U": U,
        "den": den,
        "l": l_field.values[idx],
        "X": model.trunk_inputs(mesh.vertices[idx]),
    }


def _loss_terms(arrs: dict, b_out: np.ndarray, t_out: np.ndarray, p: int):
    half = p // 2
    l = arrs["l"]
    # Overflow to inf and zero denominators are tolerated here: callers test
    # the sum for finiteness and report the offending term, so the warning
    # would be duplicate noise.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        Dx = b_out[:, :half] @ t_out[:, :half].T
        Dy = b_out[:, half:] @ t_out[:, half:].T
        num_x = arrs["H"][:, :, 0] + l[None, :] * Dx - arrs["U"][:, :, 0]
        num_y = arrs["H"][:, :, 1] + l[None, :] * Dy - arrs["U"][:, :, 1]
        ratio_x = num_x**2 / arrs["den"][:, :, 0]
        ratio_y = num_y**2 / arrs["den"][:, :, 1]
    K = b_out.shape[0]
    J = (float(np.sum(ratio_x)) + float(np.sum(ratio_y))) / K
    return J, (num_x, num_y, ratio_x, ratio_y)


def _report_nonfinite(arrs, ratio_x, ratio_y):
    for comp, ratio in ((0, ratio_x), (1, ratio_y)):
        bad = np.argwhere(~np.isfinite(ratio))
        if bad.size:
            k, i = bad[0]
            raise ValueError(
                f"non-finite loss term at snapshot {arrs['ks'][k]}, "
                f"vertex {i}, component {comp}"
            )


def loss(batch, model: DeepONetModel, mesh: Mesh, l_field: NodalField,
         eps: float = 1e-10, vertices=None) -> float:
    """Batch cost of the corrected operator; see the module docstring.

    ``vertices`` restricts the evaluation points to the given vertex
    indices (default: every mesh vertex).  eps = 0 is allowed here as long
    as no denominator vanishes; the zero-denominator case is reported as
    an error with the offending snapshot and vertex.
    """
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    arrs = _batch_arrays(batch, model, mesh, l_field, eps, vertices)
    b_out, _ = forward_batch(model.branch, arrs["G"])
    t_out, _ = forward_batch(model.trunk, arrs["X"])
    J, (_, _, rx, ry) = _loss_terms(arrs, b_out, t_out, model.p)
    if not np.isfinite(J):
        _report_nonfinite(arrs, rx, ry)
        raise ValueError("non-finite loss")
    return J


def _loss_and_param_grads(arrs: dict, model: DeepONetModel):
    """Full forward/backward pass; returns (J, flat parameter gradients)."""
    b_out, b_cache = forward_batch(model.branch, arrs["G"])
    t_out, t_cache = forward_batch(model.trunk, arrs["X"])
    p = model.p
    half = p // 2
    J, (num_x, num_y, rx, ry) = _loss_terms(arrs, b_out, t_out, p)
    if not np.isfinite(J):
        _report_nonfinite(arrs, rx, ry)
    K = b_out.shape[0]
    l = arrs["l"]
    wx = (2.0 / K) * num_x * l[None, :] / arrs["den"][:, :, 0]
    wy = (2.0 / K) * num_y * l[None, :] / arrs["den"][:, :, 1]
    dB = np.empty_like(b_out)
    dT = np.empty_like(t_out)
    dB[:, :half] = wx @ t_out[:, :half]
    dB[:, half:] = wy @ t_out[:, half:]
    dT[:, :half] = wx.T @ b_out[:, :half]
    dT[:, half:] = wy.T @ b_out[:, half:]
    g_branch, _ = backward_batch(model.branch, b_cache, dB)
    g_trunk, _ = backward_batch(model.trunk, t_cache, dT)
    return J, g_branch + g_trunk


@dataclass
class TrainResult:
    model: DeepONetModel
    history: list  # rows (epoch, train_loss, val_loss, lr)
    train_ks: list
    val_ks: list
    adam: AdamState = None
    scheduler: PlateauScheduler = None


def train(config: TrainConfig, dataset, mesh: Mesh, l_field: NodalField,
          model: DeepONetModel | None = None, adam: AdamState | None = None,
          scheduler: PlateauScheduler | None = None, start_epoch: int = 0) -> TrainResult:
    """Train (or continue training) the constrained operator.

    dataset is a sequence of Snapshots; it is split deterministically by
    config.split_ratio / config.split_seed.  A single-snapshot dataset is
    too small to split and is used as both partitions.  Passing
    model/adam/scheduler resumes a previous run; epoch numbering continues
    from start_epoch.
    """
    snaps = list(dataset)
    if len(snaps) == 1:
        train_snaps = val_snaps = snaps
    else:
        train_snaps, val_snaps = split_dataset(snaps, config.split_ratio, config.split_seed)
    if model is None:
        L, w, p = config.arch
        model = init_deeponet(config.seed, (L, w, p), mesh, activation=config.activation)
    params = model.parameters()
    if adam is None:
        adam = AdamState.for_params(params, lr=config.learning_rate)
    if scheduler is None:
        scheduler = PlateauScheduler(
            lr=config.learning_rate,
            factor=config.scheduler_factor,
            patience=config.scheduler_patience,
            threshold=config.scheduler_threshold,
            min_lr=config.scheduler_min_lr,
        )

    train_arrs = _batch_arrays(train_snaps, model, mesh, l_field, config.eps)
    val_arrs = _batch_arrays(val_snaps, model, mesh, l_field, config.eps)

    if config.batch_size is None:
        chunks = [train_arrs]
    else:
        n = len(train_snaps)
        chunks = []
        for lo in range(0, n, config.batch_size):
            part = train_snaps[lo : lo + config.batch_size]
            chunks.append(_batch_arrays(part, model, mesh, l_field, config.eps))

    history = []
    for step in range(1, config.epochs + 1):
        epoch = start_epoch + step
        lr_used = scheduler.lr
        adam.lr = lr_used
        losses = []
        for arrs in chunks:
            try:
                J, grads = _loss_and_param_grads(arrs, model)
            except ValueError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            if any(not np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(epoch, "non-finite parameter gradient")
            adam_step(adam, params, grads)
            losses.append(J)
        train_loss = float(np.mean(losses))
        b_out, _ = forward_batch(model.branch, val_arrs["G"])
        t_out, _ = forward_batch(model.trunk, val_arrs["X"])
        val_loss, (_, _, rx, ry) = _loss_terms(val_arrs, b_out, t_out, model.p)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        scheduler.step(val_loss)
        history.append((epoch, train_loss, val_loss, lr_used))
        if epoch % 500 == 0 or step == config.epochs:
            log.info("epoch %d: train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr_used)
    return TrainResult(
        model=model,
        history=history,
        train_ks=[s.k for s in train_snaps],
        val_ks=[s.k for s in val_snaps],
        adam=adam,
        scheduler=scheduler,
    )


# ---------------------------------------------------------------------------
# per-snapshot quality of trained operators


def snapshot_quality(model: DeepONetModel, snapshots, mesh: Mesh, l_field: NodalField) -> list:
    """Deformed-mesh quality minima for the learned and biharmonic operators.

    Returns one dict per snapshot (sorted by id) with the minimum scaled
    Jacobian and the minimum deformation-gradient determinant of both.
    """
    rows = []
    for s in sorted(snapshots, key=lambda s: s.k):
        U = corrected_eval(model, s.g, mesh, s.h, l_field)
        rep_d = quality_report(mesh, U)
        rep_b = quality_report(mesh, s.u_bih)
        rows.append(
            {
                "k": s.k,
                "deeponet_min_sj": rep_d.min_scaled_jacobian,
                "biharmonic_min_sj": rep_b.min_scaled_jacobian,
                "deeponet_min_detj": rep_d.min_det_gradient,
                "biharmonic_min_detj": rep_b.min_det_gradient,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# grid search


@dataclass
class RunSpec:
    run_id: str
    depth: int  # activated layers, as in the sweep table
    num_layers: int  # recurrence depth L = depth + 2
    width: int
    p: int
    seed: int
    param_count: int

    def sort_key(self):
        return (self.depth, self.width, self.p, self.seed)


def enumerate_grid(depths=(4, 5, 6, 7), widths=(128, 256, 512), ps=(32, 64),
                   seeds=(0, 1), encoding_dim: int = 412) -> list:
    """All grid combinations with closed-form parameter counts.

    ``depth`` counts activated layers: a depth-d entry owns d+1 weight
    matrices per net (input layer, d-1 inner layers, output layer), which
    is num_layers = d + 2 in the recurrence convention.  The parameter
    count covers branch (encoding_dim inputs) plus trunk (2 inputs).
    """
    specs = []
    for depth, width, p, seed in itertools.product(depths, widths, ps, seeds):
        L = depth + 2
        count = parameter_count((L, width, encoding_dim, p)) + parameter_count((L, width, 2, p))
        specs.append(
            RunSpec(
                run_id=f"d{depth}_w{width}_p{p}_s{seed}",
                depth=depth,
                num_layers=L,
                width=width,
                p=p,
                seed=seed,
                param_count=count,
            )
        )
    return specs


@dataclass
class RunResult:
    spec: RunSpec
    config: TrainConfig
    error: str | None = None
    history: list = field(default_factory=list)
    quality: list = field(default_factory=list)
    run_dir: str | None = None

    @property
    def final_train_loss(self) -> float:
        return self.history[-1][1] if self.history else float("nan")

    @property
    def final_val_loss(self) -> float:
        return self.history[-1][2] if self.history else float("nan")

    def gaps(self) -> np.ndarray:
        """Per-snapshot quality shortfall of the learned operator (positive = worse)."""
        return np.array([q["biharmonic_min_sj"] - q["deeponet_min_sj"] for q in self.quality])


def _run_one(spec: RunSpec, base: TrainConfig, dataset, mesh, l_field, out_dir) -> RunResult:
    config = replace(base, arch=(spec.num_layers, spec.width, spec.p), seed=spec.seed)
    try:
        result = train(config, dataset, mesh, l_field)
        quality = snapshot_quality(result.model, dataset, mesh, l_field)
    except (TrainingDiverged, ValueError, FloatingPointError) as exc:
        log.warning("run %s failed: %s", spec.run_id, exc)
        return RunResult(spec=spec, config=config, error=str(exc))
    run_dir = None
    if out_dir is not None:
        run_dir = str(Path(out_dir) / spec.run_id)
        write_run_dir(run_dir, config, result, quality)
    return RunResult(
        spec=spec, config=config, history=result.history, quality=quality, run_dir=run_dir
    )


def grid_search(dataset, mesh: Mesh, l_field: NodalField, base_config: TrainConfig,
                depths=(4, 5, 6, 7), widths=(128, 256, 512), ps=(32, 64), seeds=(0, 1),
                out_dir=None, jobs: int = 1) -> list:
    """Train every (depth, width, p, seed) combination and collect results.

    Individual run failures are recorded in the result list, not raised.
    Results come back in enumeration order regardless of worker count.
    """
    layout_dim = 2 * len(mesh.marker_vertices(3))
    specs = enumerate_grid(depths, widths, ps, seeds, encoding_dim=layout_dim)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if jobs <= 1:
        return [_run_one(s, base_config, dataset, mesh, l_field, out_dir) for s in specs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_run_one, s, base_config, dataset, mesh, l_field, out_dir)
            for s in specs
        ]
        return [f.result() for f in futures]


def select_best(results, aggregator: str = "worst") -> RunResult:
    """Pick the run whose quality gap to the biharmonic operator is smallest.

    The per-snapshot gap (biharmonic minus learned minimum scaled Jacobian)
    is aggregated over the whole dataset by its worst case (default) or its
    mean.  Ties fall back to the lower final validation loss, then to the
    lexicographically smaller grid position.
    """
    if aggregator not in ("worst", "mean"):
        raise ValueError(f"unknown aggregator {aggregator!r}")
    viable = [r for r in results if r.error is None and r.quality]
    if not viable:
        raise ValueError("no successful runs to select from")

    def key(r: RunResult):
        gaps = r.gaps()
        agg = float(gaps.max()) if aggregator == "worst" else float(gaps.mean())
        return (agg, r.final_val_loss, r.spec.sort_key())

    return min(viable, key=key)


# ---------------------------------------------------------------------------
# run directory persistence


def write_run_dir(run_dir, config: TrainConfig, result: TrainResult, quality: list) -> None:
    """Persist config, history, model bundle, optimizer state and quality."""
    root = Path(run_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(
        json.dumps(config.as_dict(), indent=2), encoding="utf-8"
    )
    write_csv(root / "history.csv", ["epoch", "train_loss", "val_loss", "lr"], result.history)
    save_model_bundle(result.model, root / "model")
    write_csv(
        root / "quality.csv",
        ["k", "min_quality_deeponet", "min_quality_biharmonic"],
        [(q["k"], q["deeponet_min_sj"], q["biharmonic_min_sj"]) for q in quality],
    )
    if result.adam is not None:
        state = {
            "epoch": result.history[-1][0] if result.history else 0,
            "adam": {
                "lr": result.adam.lr,
                "beta1": result.adam.beta1,
                "beta2": result.adam.beta2,
                "eps": result.adam.eps,
                "t": result.adam.t,
                "m": [m.tolist() for m in result.adam.m],
                "v": [v.tolist() for v in result.adam.v],
            },
            "scheduler": {
                "lr": result.scheduler.lr,
                "factor": result.scheduler.factor,
                "patience": result.scheduler.patience,
                "threshold": result.scheduler.threshold,
                "min_lr": result.scheduler.min_lr,
                "best": result.scheduler.best,
                "num_bad": result.scheduler.num_bad,
            },
        }
        (root / "train_state.json").write_text(json.dumps(state), encoding="utf-8")


def load_run_state(run_dir):
    """Reload (config, model, adam, scheduler, epoch) for resuming a run."""
    root = Path(run_dir)
    config = TrainConfig.from_dict(json.loads((root / "config.json").read_text(encoding="utf-8")))
    model = load_model_bundle(root / "model")
    doc = json.loads((root / "train_state.json").read_text(encoding="utf-8"))
    a = doc["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
    adam.m = [np.asarray(m, dtype=np.float64) for m in a["m"]]
    adam.v = [np.asarray(v, dtype=np.float64) for v in a["v"]]
    s = doc["scheduler"]
    scheduler = PlateauScheduler(
        lr=s["lr"],
        factor=s["factor"],
        patience=s["patience"],
        threshold=s["threshold"],
        min_lr=s["min_lr"],
        best=s["best"],
        num_bad=s["num_bad"],
    )
    return config, model, adam, scheduler, int(doc["epoch"])
