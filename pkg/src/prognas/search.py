"""Progressive search driver: staged super-networks of growing depth, warmup
then alternating first-order weight/architecture steps, exponentially decayed
skip-connect dropout, and per-edge candidate pruning between stages."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import ALL_KINDS
from .cell import AlphaTable, Schema, alpha_table_from_snapshot, full_schema, init_alphas
from .data import Dataset, split_half
from .genotype import Genotype, derive_genotype, genotype_serialize, refine_skips
from .ops import cross_entropy
from .optim import OptimizerConfig, ParamStore, adam_step, sgd_step
from .supernet import SearchNetConfig, SuperNet, build_supernet
from .tensor import Tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "val_loss", "lr", "dropout_rate",
                  "mean_edge_entropy")

# rng substream codes, keyed by (seed, stage, code) so a schedule change
# never perturbs earlier stages
_RNG_WEIGHTS, _RNG_ALPHAS, _RNG_DATA, _RNG_DROPOUT = 0, 1, 2, 3


def stage_rng(seed: int, stage: int, code: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, code])


@dataclass(frozen=True)
class StageConfig:
    """One stage of the progressive schedule."""

    cells: int
    ops: int
    channels: int
    dropout: float
    epochs: int = 25
    warmup_epochs: int = 10
    batch_size: int = 32


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple[StageConfig, ...]
    nodes: int = 4

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule has no stages")
        if self.stages[0].ops != len(ALL_KINDS):
            raise ValueError(
                f"stage 1 must start from the full candidate set "
                f"({len(ALL_KINDS)}), got {self.stages[0].ops}")
        if self.stages[-1].ops < 2:
            raise ValueError(
                f"final stage must keep at least 2 candidates, got {self.stages[-1].ops}")
        prev = None
        for k, st in enumerate(self.stages):
            where = f"stage {k + 1}"
            if st.cells < 2:
                raise ValueError(f"{where}: needs at least 2 cells")
            if not 0.0 <= st.dropout < 1.0:
                raise ValueError(f"{where}: dropout must be in [0, 1), got {st.dropout}")
            if st.warmup_epochs > st.epochs:
                raise ValueError(
                    f"{where}: warmup ({st.warmup_epochs}) exceeds epochs ({st.epochs})")
            if st.batch_size < 1:
                raise ValueError(f"{where}: batch size must be >= 1")
            if prev is not None:
                if st.cells <= prev.cells:
                    raise ValueError(f"{where}: cell count must strictly increase")
                if st.ops >= prev.ops:
                    raise ValueError(f"{where}: candidate count must strictly decrease")
            prev = st


@dataclass(frozen=True)
class DropoutPolicy:
    """Geometric decay from `initial` to a floor across one stage."""

    initial: float
    epochs: int
    floor: float | None = None   # default: 5% of the initial rate
    floor_frac: float = 0.05

    def rate(self, epoch: int) -> float:
        if not 0 <= epoch <= self.epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.epochs}]")
        if self.initial <= 0.0:
            return 0.0
        floor = self.floor if self.floor is not None else self.floor_frac * self.initial
        gamma = (floor / self.initial) ** (1.0 / self.epochs)
        return self.initial * gamma ** epoch


def dropout_rate(policy: DropoutPolicy, epoch: int) -> float:
    return policy.rate(epoch)


@dataclass
class SearchSettings:
    """Optimizer and regularization settings shared by all stages."""

    weight_lr: float = 0.025
    weight_lr_min: float = 0.001
    weight_momentum: float = 0.9
    weight_decay: float = 3e-4
    alpha_lr: float = 6e-4
    alpha_betas: tuple[float, float] = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    skip_limit: int = 2
    dropout_floor_frac: float = 0.05

    def weight_optimizer(self, epochs: int) -> OptimizerConfig:
        cfg = OptimizerConfig(kind="sgd", lr=self.weight_lr, lr_min=self.weight_lr_min,
                              schedule="cosine", total_steps=epochs,
                              momentum=self.weight_momentum,
                              weight_decay=self.weight_decay)
        cfg.validate()
        return cfg

    def alpha_optimizer(self) -> OptimizerConfig:
        cfg = OptimizerConfig(kind="adam", lr=self.alpha_lr, schedule="constant",
                              betas=self.alpha_betas,
                              weight_decay=self.alpha_weight_decay)
        cfg.validate()
        return cfg


@contextlib.contextmanager
def frozen(store: ParamStore):
    """Exclude a parameter group from the next forward/backward."""
    tensors = list(store.params.values())
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, s in zip(tensors, saved):
            t.requires_grad = s


def _batch_loss(net: SuperNet, alphas: AlphaTable, images: np.ndarray,
                labels: np.ndarray, training: bool, dropout_p: float,
                rng: np.random.Generator | None):
    logits = net.forward(Tensor(images), alphas, training, dropout_p, rng)
    return cross_entropy(logits, labels)


def weight_step(net: SuperNet, alphas: AlphaTable, weight_store: ParamStore,
                opt: OptimizerConfig, lr_t: int, images: np.ndarray,
                labels: np.ndarray, dropout_p: float,
                rng: np.random.Generator) -> float:
    """One SGD step on the network weights with architecture parameters frozen."""
    weight_store.zero_grad()
    with frozen(alphas.store):
        loss = _batch_loss(net, alphas, images, labels, True, dropout_p, rng)
        loss.backward()
    sgd_step(weight_store, opt, lr_t)
    return loss.item()


def alpha_step(net: SuperNet, alphas: AlphaTable, weight_store: ParamStore,
               opt: OptimizerConfig, images: np.ndarray, labels: np.ndarray,
               dropout_p: float, rng: np.random.Generator) -> float:
    """One Adam step on the architecture parameters with weights frozen."""
    alphas.store.zero_grad()
    with frozen(weight_store):
        loss = _batch_loss(net, alphas, images, labels, True, dropout_p, rng)
        loss.backward()
    adam_step(alphas.store, opt)
    return loss.item()


def prune_operations(alphas: AlphaTable, keep: int) -> Schema:
    """Per-edge candidate lists for the next stage: the `keep` largest softmax
    weights survive; ties break toward the lower canonical index."""
    if keep < 1:
        raise ValueError(f"keep must be >= 1, got {keep}")
    tables = {}
    for cell_type in ("normal", "reduce"):
        kept_lists = []
        for me in alphas.edges(cell_type):
            if keep >= len(me.candidates):
                raise ValueError(
                    f"{cell_type} edge {me.edge}: keep={keep} must be smaller "
                    f"than the current candidate count {len(me.candidates)}")
            w = me.weight_values()
            order = sorted(range(len(me.candidates)),
                           key=lambda i: (-w[i], int(me.candidates[i])))
            kept = sorted(me.candidates[i] for i in order[:keep])
            kept_lists.append(tuple(kept))
        tables[cell_type] = tuple(kept_lists)
    return Schema(alphas.schema.nodes, tables["normal"], tables["reduce"])


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _eval_loss(net: SuperNet, alphas: AlphaTable, weight_store: ParamStore,
               ds: Dataset, batch_size: int) -> float:
    """Mean loss with every parameter group frozen (no graph kept)."""
    losses, counts = [], []
    with frozen(weight_store), frozen(alphas.store):
        for i in range(0, len(ds.labels), batch_size):
            imgs = ds.images[i:i + batch_size]
            lbls = ds.labels[i:i + batch_size]
            loss = _batch_loss(net, alphas, imgs, lbls, True, 0.0, None)
            losses.append(loss.item())
            counts.append(len(lbls))
    return float(np.average(losses, weights=counts))


def run_stage(net: SuperNet, alphas: AlphaTable, weight_store: ParamStore,
              stage: StageConfig, settings: SearchSettings,
              weight_half: Dataset, alpha_half: Dataset,
              data_rng: np.random.Generator, dropout_rng: np.random.Generator,
              stage_index: int = 0) -> list[dict]:
    """Warmup epochs of weight-only training, then per-iteration alternation
    of one architecture step and one weight step. Returns one metrics row per
    epoch: (epoch, train_loss, val_loss, lr, dropout_rate, mean_edge_entropy)."""
    policy = DropoutPolicy(stage.dropout, stage.epochs,
                           floor_frac=settings.dropout_floor_frac)
    w_opt = settings.weight_optimizer(stage.epochs)
    a_opt = settings.alpha_optimizer()
    rows = []
    for epoch in range(stage.epochs):
        p = policy.rate(epoch)
        lr = w_opt.lr_at(epoch)
        warm = epoch < stage.warmup_epochs
        w_batches = _epoch_batches(len(weight_half.labels), stage.batch_size, data_rng)
        a_batches = None if warm else _epoch_batches(
            len(alpha_half.labels), stage.batch_size, data_rng)
        train_losses, val_losses = [], []
        for it, wb in enumerate(w_batches):
            if a_batches is not None:
                ab = a_batches[it % len(a_batches)]
                vl = alpha_step(net, alphas, weight_store, a_opt,
                                alpha_half.images[ab], alpha_half.labels[ab],
                                p, dropout_rng)
                if not np.isfinite(vl):
                    raise FloatingPointError(
                        f"stage {stage_index + 1} epoch {epoch}: non-finite "
                        f"validation loss {vl}")
                val_losses.append(vl)
            tl = weight_step(net, alphas, weight_store, w_opt, epoch,
                             weight_half.images[wb], weight_half.labels[wb],
                             p, dropout_rng)
            if not np.isfinite(tl):
                raise FloatingPointError(
                    f"stage {stage_index + 1} epoch {epoch}: non-finite "
                    f"training loss {tl}")
            train_losses.append(tl)
        val = (float(np.mean(val_losses)) if val_losses
               else _eval_loss(net, alphas, weight_store, alpha_half, stage.batch_size))
        rows.append({
            "epoch": epoch,
            "train_loss": float(np.mean(train_losses)),
            "val_loss": val,
            "lr": lr,
            "dropout_rate": p,
            "mean_edge_entropy": alphas.mean_entropy(),
        })
    return rows


@dataclass
class SearchState:
    """Resumable progress marker, written at stage boundaries.

    Stages re-initialize all weights and architecture parameters from
    substreams of (seed, stage index), so the pruned schema plus the stage
    index fully determine the remaining run.
    """

    seed: int
    next_stage: int
    nodes: int
    schema_snapshot: dict | None  # per-edge candidate names, None = full space

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "seed": self.seed, "next_stage": self.next_stage,
            "nodes": self.nodes, "schema": self.schema_snapshot,
        }, indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "SearchState":
        doc = json.loads(Path(path).read_text())
        return SearchState(seed=int(doc["seed"]), next_stage=int(doc["next_stage"]),
                           nodes=int(doc["nodes"]), schema_snapshot=doc["schema"])


def _schema_to_snapshot(schema: Schema) -> dict:
    from .cell import CellSpec
    edges = CellSpec(schema.nodes).edges
    return {ct: [{"edge": list(e), "candidates": [k.op_name for k in cands]}
                 for e, cands in zip(edges, getattr(schema, ct))]
            for ct in ("normal", "reduce")}


def _schema_from_snapshot(snap: dict, nodes: int) -> Schema:
    from .catalog import kind_from_name
    tables = {ct: tuple(tuple(kind_from_name(n) for n in meta["candidates"])
                        for meta in snap[ct])
              for ct in ("normal", "reduce")}
    return Schema(nodes, tables["normal"], tables["reduce"])


def run_progressive_search(schedule: StageSchedule, settings: SearchSettings,
                           dataset: Dataset, seed: int, out_dir,
                           num_classes: int | None = None,
                           resume_from: SearchState | None = None) -> Genotype:
    """Run every stage, pruning candidates in between; derive and refine the
    final genotype. Persists per-stage artifacts under `out_dir`."""
    from .report import save_search_figure, write_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weight_half, alpha_half = split_half(dataset, seed)
    classes = num_classes if num_classes is not None else dataset.num_classes
    in_ch = dataset.images.shape[1]
    size = dataset.images.shape[2]

    if resume_from is None:
        start, schema = 0, full_schema(schedule.nodes)
    else:
        start = resume_from.next_stage
        schema = (full_schema(schedule.nodes) if resume_from.schema_snapshot is None
                  else _schema_from_snapshot(resume_from.schema_snapshot, schedule.nodes))

    alphas = None
    for k in range(start, len(schedule.stages)):
        stage = schedule.stages[k]
        for counts in (schema.counts("normal"), schema.counts("reduce")):
            if any(c != stage.ops for c in counts):
                raise ValueError(
                    f"stage {k + 1}: schema carries {set(counts)} candidates "
                    f"per edge, schedule expects {stage.ops}")
        cfg = SearchNetConfig(cells=stage.cells, channels=stage.channels,
                              nodes=schedule.nodes, num_classes=classes,
                              in_channels=in_ch, input_size=size)
        store = ParamStore()
        net = build_supernet(cfg, schema, store, stage_rng(seed, k, _RNG_WEIGHTS))
        alphas = init_alphas(schema, stage_rng(seed, k, _RNG_ALPHAS))
        log.info("stage %d: L=%d O=%d C=%d p0=%.2f", k + 1, stage.cells,
                 stage.ops, stage.channels, stage.dropout)
        rows = run_stage(net, alphas, store, stage, settings, weight_half,
                         alpha_half, stage_rng(seed, k, _RNG_DATA),
                         stage_rng(seed, k, _RNG_DROPOUT), stage_index=k)

        stage_dir = out / f"stage_{k + 1}"
        stage_dir.mkdir(exist_ok=True)
        write_csv(stage_dir / "metrics.csv", rows, METRIC_COLUMNS)
        save_search_figure(rows, stage_dir / "metrics.png", title=f"stage {k + 1}")
        (stage_dir / "alpha.json").write_text(
            json.dumps(alphas.snapshot(), indent=2, sort_keys=True) + "\n")
        store.save(stage_dir / "params.ckpt")

        if k + 1 < len(schedule.stages):
            schema = prune_operations(alphas, schedule.stages[k + 1].ops)
            snap = _schema_to_snapshot(schema)
            (stage_dir / "pruned_schema.json").write_text(
                json.dumps(snap, indent=2, sort_keys=True) + "\n")
            SearchState(seed, k + 1, schedule.nodes, snap).save(out / "state.json")

    raw = derive_genotype(alphas)
    (out / "genotype_raw.txt").write_text(genotype_serialize(raw))
    final = refine_skips(alphas, settings.skip_limit, "normal")
    (out / "genotype.txt").write_text(genotype_serialize(final))
    return final
