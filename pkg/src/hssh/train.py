"""Training loop, evaluation, checkpoints, and the style-export report."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, style
from . import tensor as T
from .config import RunConfig, run_config_to_dict
from .data import IoError, Split, read_split
from .encoder import Encoder, EncoderConfig, StateEmbedding
from .losses import BatchLabels, HyperbolicEmbeddingSet
from .style import SlopeWindow, StyleStats
from .tensor import AdamState, NonFinite, Tensor

CHECKPOINT_MAGIC = b"HSSC"
CHECKPOINT_VERSION = 1

# purpose offsets for seed streams: init, batch order, style sampling
_SEED_INIT, _SEED_ORDER, _SEED_STYLE = 0, 1, 2


def _rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


@dataclass
class BatchOutput:
    loss: Tensor
    cls: Tensor
    cls_tilde: Tensor | None
    hmc: Tensor | None
    clean: list[StateEmbedding]
    branch: list[StateEmbedding] | None
    targets: dict[int, StyleStats] | None
    gammas: dict[int, float]


def batch_forward(enc: Encoder, images: Tensor, labels: BatchLabels,
                  run: RunConfig, window: SlopeWindow,
                  style_rng: np.random.Generator | None,
                  targets: dict[int, StyleStats] | None = None) -> BatchOutput:
    """One training-mode forward pass.

    The clean pass feeds the classifier and updates the slope window; when
    hallucination is enabled a second pass re-runs every stage, replacing
    the selected stage outputs with their re-stylized versions before the
    next stage consumes them.  ``targets`` overrides the sampled styles
    (used to freeze them for finite-difference checks).
    """
    clean = enc.encode(images)
    logits = enc.classify(clean[3].f)
    l_cls = losses.cls_loss(logits, labels.fine)

    gammas: dict[int, float] = {}
    for se in clean:
        mu, sg = style.stats_arrays(se.f.data)
        try:
            gamma = style.fit_slope_arrays(mu, sg)
        except style.DegenerateCloud:
            gamma = 0.0
        gammas[se.stage] = gamma
        window.push(se.stage, gamma)

    branch = None
    l_cls_tilde = None
    used_targets: dict[int, StyleStats] | None = None
    if run.enable_ssh:
        branch = []
        used_targets = {}
        g = enc.patchify(images)
        for i in range(1, 5):
            se = StateEmbedding(f=enc.run_stage(i, g), stage=i)
            if i in run.stages_hallucinated:
                stats = style.compute_style(se)
                if targets is not None:
                    tgt = targets[i]
                else:
                    tgt = style.sample_style(stats, window.range(i), style_rng)
                used_targets[i] = tgt
                se = style.hallucinate(se, stats, tgt)
            branch.append(se)
            g = se.f
        l_cls_tilde = losses.cls_loss(enc.classify(branch[3].f), labels.fine)

    l_hmc = None
    if run.enable_hmc:
        z = {se.stage: losses.project_stage(se, run.curvature) for se in clean}
        z_tilde = None
        if branch is not None:
            z_tilde = {se.stage: losses.project_stage(se, run.curvature) for se in branch}
        emb = HyperbolicEmbeddingSet(z=z, z_tilde=z_tilde, stages=(1, 2, 3, 4))
        l_hmc = losses.hmc_loss(emb, labels, run.curvature)

    loss = losses.total_loss(l_cls, l_cls_tilde, l_hmc, run.lambda_hmc)
    return BatchOutput(loss=loss, cls=l_cls, cls_tilde=l_cls_tilde, hmc=l_hmc,
                       clean=clean, branch=branch, targets=used_targets,
                       gammas=gammas)


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def batch_labels(split: Split, idx: np.ndarray) -> BatchLabels:
    return BatchLabels(fine=split.fine[idx].astype(np.int64),
                       coarse=split.coarse[idx].astype(np.int64))


def evaluate_split(enc: Encoder, split: Split, batch_size: int = 64) -> float:
    """Top-1 accuracy, no hallucination; argmax breaks ties at the lowest
    class index."""
    if len(split) == 0:
        raise IoError("cannot evaluate an empty split")
    correct = 0
    with T.no_grad():
        for idx in _batches(len(split), batch_size, np.arange(len(split))):
            images = Tensor(split.images[idx].astype(np.float64))
            f = enc.patchify(images)
            for i in range(1, 5):
                f = enc.run_stage(i, f)
            logits = enc.classify(f)
            pred = np.argmax(logits.data, axis=1)
            correct += int((pred == split.fine[idx].astype(np.int64)).sum())
    return correct / len(split)


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    final_val_acc: float


def train(run: RunConfig, data_dir, out_dir,
          encoder_overrides: dict | None = None) -> TrainResult:
    """Train on the source splits in ``data_dir``; write a checkpoint,
    per-epoch JSONL metrics, and the resolved config into ``out_dir``.

    A non-finite value anywhere in a step aborts training after dumping a
    diagnostic record of the offending step.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_split = read_split(data_dir / "train.bin")
    val_split = read_split(data_dir / "val.bin")

    num_classes = int(train_split.fine.max()) + 1
    overrides = dict(encoder_overrides or {})
    cfg = EncoderConfig(num_classes=num_classes,
                        image_size=train_split.images.shape[-1], **overrides)
    enc = Encoder(cfg, _rng(run.seed, _SEED_INIT))
    params = list(enc.parameters().values())
    state = AdamState(params)
    order_rng = _rng(run.seed, _SEED_ORDER)
    style_rng = _rng(run.seed, _SEED_STYLE)
    window = SlopeWindow(run.gamma_window)

    metrics_path = out_dir / "metrics.jsonl"
    lines = []
    step = 0
    for epoch in range(run.epochs):
        order = order_rng.permutation(len(train_split))
        sums = {"loss": 0.0, "cls": 0.0, "cls_tilde": 0.0, "hmc": 0.0}
        nb = 0
        epoch_gammas: list[float] = []
        for idx in _batches(len(train_split), run.batch_size, order):
            try:
                images = Tensor(train_split.images[idx].astype(np.float64))
                out = batch_forward(enc, images, batch_labels(train_split, idx),
                                    run, window, style_rng)
                out.loss.backward()
                T.adam_step(params, state, run.lr, run.beta1, run.beta2)
            except NonFinite as e:
                dump = {
                    "epoch": epoch,
                    "step": step,
                    "error": str(e),
                    "batch_indices": [int(i) for i in idx],
                    "last_epoch_metrics": lines[-1] if lines else None,
                }
                (out_dir / "diagnostic.json").write_text(json.dumps(dump, indent=2))
                raise
            sums["loss"] += out.loss.item()
            sums["cls"] += out.cls.item()
            sums["cls_tilde"] += out.cls_tilde.item() if out.cls_tilde is not None else 0.0
            sums["hmc"] += out.hmc.item() if out.hmc is not None else 0.0
            epoch_gammas.extend(out.gammas.values())
            nb += 1
            step += 1
        val_acc = evaluate_split(enc, val_split)
        record = {
            "epoch": epoch,
            "train_loss": sums["loss"] / nb,
            "cls": sums["cls"] / nb,
            "cls_tilde": sums["cls_tilde"] / nb,
            "hmc": sums["hmc"] / nb,
            "val_acc": val_acc,
            "gamma_min": min(epoch_gammas),
            "gamma_max": max(epoch_gammas),
        }
        lines.append(record)

    metrics_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in lines))
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, enc.parameters())
    (out_dir / "config.json").write_text(json.dumps({
        "run": run_config_to_dict(run),
        "encoder": {
            "num_classes": cfg.num_classes,
            "in_channels": cfg.in_channels,
            "image_size": cfg.image_size,
            "patch_size": cfg.patch_size,
            "stage_channels": list(cfg.stage_channels),
            "state_dim": cfg.state_dim,
            "blocks_per_stage": cfg.blocks_per_stage,
            "scan_directions": cfg.scan_directions,
        },
    }, indent=2, sort_keys=True))
    return TrainResult(checkpoint_path=ckpt_path, metrics_path=metrics_path,
                       final_val_acc=lines[-1]["val_acc"] if lines else 0.0)


# ---------------------------------------------------------------------------
# checkpoint container: named float64 tensors, little-endian


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(params)))
            for name, t in params.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", t.ndim))
                for dim in t.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(t.data.astype("<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise IoError(f"{path} is not a checkpoint container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise IoError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    return out


def load_model(checkpoint_path) -> tuple[Encoder, RunConfig]:
    """Rebuild an encoder from a checkpoint and its sibling config.json."""
    checkpoint_path = Path(checkpoint_path)
    cfg_path = checkpoint_path.parent / "config.json"
    try:
        doc = json.loads(cfg_path.read_text())
    except OSError as e:
        raise IoError(f"cannot read {cfg_path}: {e}") from e
    enc_doc = doc["encoder"]
    cfg = EncoderConfig(
        num_classes=enc_doc["num_classes"],
        in_channels=enc_doc["in_channels"],
        image_size=enc_doc["image_size"],
        patch_size=enc_doc["patch_size"],
        stage_channels=tuple(enc_doc["stage_channels"]),
        state_dim=enc_doc["state_dim"],
        blocks_per_stage=enc_doc["blocks_per_stage"],
        scan_directions=enc_doc["scan_directions"],
    )
    from .config import run_config_from_dict

    run = run_config_from_dict(doc["run"])
    enc = Encoder(cfg, _rng(run.seed, _SEED_INIT))
    weights = load_checkpoint(checkpoint_path)
    if set(weights) != set(enc.parameters()):
        raise IoError("checkpoint parameters do not match the encoder layout")
    for name, t in enc.parameters().items():
        if weights[name].shape != t.shape:
            raise IoError(f"checkpoint tensor {name} has shape {weights[name].shape}, "
                          f"expected {t.shape}")
        t.data = weights[name].copy()
    return enc, run


def evaluate(checkpoint_path, data_dir, split_name: str = "test") -> float:
    """Top-1 accuracy of a saved model on one split."""
    enc, _ = load_model(checkpoint_path)
    split = read_split(Path(data_dir) / f"{split_name}.bin")
    return evaluate_split(enc, split)


def style_export(checkpoint_path, data_dir, out_path, num_batches: int = 4) -> int:
    """Dump original and hallucinated (mu, sigma) clouds per stage as CSV.

    Uses training-mode forward passes over the head of the train split with
    the saved run configuration; with hallucination disabled only original
    rows are written.  Returns the number of data rows.
    """
    enc, run = load_model(checkpoint_path)
    split = read_split(Path(data_dir) / "train.bin")
    window = SlopeWindow(run.gamma_window)
    style_rng = _rng(run.seed, _SEED_STYLE)
    rows = []
    with T.no_grad():
        for b, idx in enumerate(_batches(len(split), run.batch_size,
                                         np.arange(len(split)))):
            if b >= num_batches:
                break
            images = Tensor(split.images[idx].astype(np.float64))
            out = batch_forward(enc, images, batch_labels(split, idx),
                                run, window, style_rng)
            for se in out.clean:
                mu, sg = style.stats_arrays(se.f.data)
                rows.extend(style.export_rows(
                    StyleStats(mu=Tensor(mu), sigma=Tensor(sg), stage=se.stage),
                    b, "original"))
            if out.branch is not None:
                for se in out.branch:
                    mu, sg = style.stats_arrays(se.f.data)
                    rows.extend(style.export_rows(
                        StyleStats(mu=Tensor(mu), sigma=Tensor(sg), stage=se.stage),
                        b, "hallucinated"))
    try:
        style.write_style_csv(out_path, rows)
    except OSError as e:
        raise IoError(f"cannot write {out_path}: {e}") from e
    return len(rows)
