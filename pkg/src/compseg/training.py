"""Joint optimization engine: configuration, per-batch updates, validation
scoring, k-fold cross-validation with best-checkpoint selection, and the
supervised UNet baseline modes.

Per training batch the engine performs one discriminator update (least-squares
objective for both domain discriminators, fakes detached) followed by one
joint update of encoders, generators, kernel bank, and segmentation head
minimizing lambda_cycle * L_cycle + lambda_gen * (L_gen_x + L_gen_y)
+ lambda_vmf * L_cluster + lambda_seg * L_seg, after which the kernels are
projected back to unit norm. The cluster term only ever sees features of real
target-domain images; the segmentation term only ever sees source labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .baselines import UNet
from .data import DatasetManifest, Domain, FoldSplit, Image, Mask, hflip, load_dataset, make_folds
from .metrics import (
    ImageMetrics,
    MetricsReport,
    aggregate,
    apply_largest_component,
    dsc,
    per_image_metrics,
    write_metrics_csv,
)
from .segmentation import SegmentationHead, dice_loss
from .translation import (
    TranslationNets,
    build_translation_nets,
    cycle_direction_loss,
    disc_loss,
    gen_loss,
    set_requires_grad,
)
from .vmf import KernelBank, activations, cluster_loss, normalize_features, renormalize_kernels


class Mode(Enum):
    PROPOSED = "proposed"
    BASELINE_FS = "baseline-fs"
    BASELINE_NA = "baseline-na"


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the published training recipe."""

    epochs: int = 200
    batch_size: int = 4
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    num_kernels: int = 10
    sigma: float = 30.0
    num_folds: int = 5
    num_classes: int = 3
    lambda_cycle: float = 10.0
    lambda_gen: float = 1.0
    lambda_disc: float = 1.0
    lambda_vmf: float = 1.0
    lambda_seg: float = 5.0
    seed: int = 0
    mode: str = "proposed"
    image_size: int = 64
    feature_channels: int = 64
    base_channels: int = 32
    n_res_blocks: int = 4
    disc_base_channels: int = 32
    head_base_channels: int = 32
    unet_base_channels: int = 16
    val_fraction: float = 0.2
    recon_weight: float = 0.1  # weight of the cycle-reconstruction term in the validation score
    normalize_activations: bool = True
    kernel_grad_from_seg: bool = True
    disc_steps: int = 1
    augment_hflip: bool = False

    def __post_init__(self):
        Mode(self.mode)  # raises on unknown mode strings
        for name in ("epochs", "batch_size", "num_kernels", "num_folds", "num_classes", "disc_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"config '{name}' must be >= 1, got {getattr(self, name)}")
        for name in ("lr", "sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config '{name}' must be positive, got {getattr(self, name)}")
        for name in ("lambda_cycle", "lambda_gen", "lambda_disc", "lambda_vmf", "lambda_seg"):
            if getattr(self, name) < 0:
                raise ValueError(f"config '{name}' must be nonnegative, got {getattr(self, name)}")

    @property
    def mode_enum(self) -> Mode:
        return Mode(self.mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: Path | str, overrides: dict | None = None) -> "TrainConfig":
        """Parse a flat key-value config file ('key = value' lines, '#' comments)."""
        raw: dict = {}
        types = {f.name: f.type for f in fields(cls)}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in types:
                    raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
                raw[key] = _coerce(value, types[key], key)
        if overrides:
            raw.update(overrides)
        return cls.from_dict(raw)

    def to_file(self, path: Path | str) -> None:
        with open(path, "w") as f:
            for field_ in fields(self):
                f.write(f"{field_.name} = {getattr(self, field_.name)}\n")


def _coerce(value: str, annotation, key: str):
    ann = str(annotation)
    if "bool" in ann:
        if value.lower() not in _BOOL_WORDS:
            raise ValueError(f"config key '{key}' expects a boolean, got '{value}'")
        return _BOOL_WORDS[value.lower()]
    if "int" in ann:
        return int(value)
    if "float" in ann:
        return float(value)
    return value


def fold_seed(seed: int, fold_index: int) -> int:
    # Distinct, stable stream per fold.
    return (seed * 100003 + fold_index) % (2**63 - 1)


# ---------------------------------------------------------------------------
# Training state


@dataclass
class TrainState:
    config: TrainConfig
    fold_index: int
    models: dict[str, nn.Module]
    optimizers: dict[str, torch.optim.Adam]
    param_names: dict[str, list[tuple[str, nn.Parameter]]]
    batch_rng: np.random.Generator
    epoch: int = 0
    best_val: float = -math.inf

    @property
    def mode(self) -> Mode:
        return self.config.mode_enum

    @property
    def nets(self) -> TranslationNets:
        m = self.models
        return TranslationNets(e_x=m["e_x"], e_y=m["e_y"], g_x=m["g_x"], g_y=m["g_y"],
                               d_x=m["d_x"], d_y=m["d_y"])

    @property
    def bank(self) -> KernelBank:
        return self.models["bank"]  # type: ignore[return-value]

    @property
    def head(self) -> SegmentationHead:
        return self.models["head"]  # type: ignore[return-value]

    @property
    def unet(self) -> UNet:
        return self.models["unet"]  # type: ignore[return-value]


def build_state(config: TrainConfig, fold_index: int = 0) -> TrainState:
    """Construct models and optimizers deterministically from (config, fold)."""
    torch.manual_seed(fold_seed(config.seed, fold_index))
    models: dict[str, nn.Module] = {}
    if config.mode_enum is Mode.PROPOSED:
        nets = build_translation_nets(
            image_size=config.image_size,
            base_channels=config.base_channels,
            feature_channels=config.feature_channels,
            n_res_blocks=config.n_res_blocks,
            disc_base_channels=config.disc_base_channels,
        )
        models.update(nets.modules())
        models["bank"] = KernelBank(config.num_kernels, config.feature_channels, config.sigma)
        models["head"] = SegmentationHead(config.num_kernels, config.num_classes,
                                          config.head_base_channels)
        main_models = ["e_x", "e_y", "g_x", "g_y", "bank", "head"]
        disc_models = ["d_x", "d_y"]
        param_names = {
            "main": _named_params(models, main_models),
            "disc": _named_params(models, disc_models),
        }
    else:
        models["unet"] = UNet(config.num_classes, base_channels=config.unet_base_channels)
        param_names = {"main": _named_params(models, ["unet"])}

    betas = (config.adam_beta1, config.adam_beta2)
    optimizers = {
        name: torch.optim.Adam([p for _, p in params], lr=config.lr, betas=betas)
        for name, params in param_names.items()
    }
    return TrainState(
        config=config,
        fold_index=fold_index,
        models=models,
        optimizers=optimizers,
        param_names=param_names,
        batch_rng=np.random.default_rng([config.seed, fold_index, 0xBA7C4]),
    )


def _named_params(models: dict[str, nn.Module], names: list[str]) -> list[tuple[str, nn.Parameter]]:
    out = []
    for name in names:
        for pname, p in models[name].named_parameters():
            out.append((f"{name}.{pname}", p))
    return out


def loss_keys(mode: Mode) -> list[str]:
    if mode is Mode.PROPOSED:
        return ["disc_x", "disc_y", "cycle", "gen_x", "gen_y", "vmf", "seg", "total"]
    return ["seg", "total"]


# ---------------------------------------------------------------------------
# Batch helpers


def images_to_tensor(images: list[Image]) -> torch.Tensor:
    return torch.from_numpy(np.stack([img.pixels for img in images])[:, None, :, :]).float()


def masks_to_tensor(masks: list[Mask]) -> torch.Tensor:
    return torch.from_numpy(np.stack([m.labels for m in masks])).long()


def _scalar(value: torch.Tensor) -> float:
    return float(value.detach())


def _check_finite(terms: dict[str, torch.Tensor]) -> None:
    for name, value in terms.items():
        if not bool(torch.isfinite(value)):
            raise RuntimeError(f"non-finite loss term '{name}' ({_scalar(value)}); aborting step")


# ---------------------------------------------------------------------------
# Training and validation


def train_step(
    state: TrainState,
    batch_x: list[tuple[Image, Mask]],
    batch_y: list[tuple[Image, Mask | None]],
) -> dict[str, float]:
    """One optimization step; returns every component loss value.

    batch_x holds source images with labels; batch_y target images whose
    masks are ignored except in fully-supervised baseline mode.
    """
    if state.mode is Mode.PROPOSED:
        return _train_step_proposed(state, batch_x, batch_y)
    return _train_step_baseline(state, batch_x, batch_y)


def _train_step_proposed(state, batch_x, batch_y) -> dict[str, float]:
    cfg = state.config
    nets = state.nets
    bank, head = state.bank, state.head
    x = images_to_tensor([img for img, _ in batch_x])
    m_x = masks_to_tensor([mask for _, mask in batch_x])
    y = images_to_tensor([img for img, _ in batch_y])
    report: dict[str, float] = {}

    # (a) discriminator update; fakes detached so no gradient reaches
    # generators or encoders.
    with torch.no_grad():
        fake_y_detached = nets.g_y(nets.e_x(x))
        fake_x_detached = nets.g_x(nets.e_y(y))
    for _ in range(cfg.disc_steps):
        state.optimizers["disc"].zero_grad(set_to_none=True)
        l_disc_x = disc_loss(nets.d_x(x), nets.d_x(fake_x_detached))
        l_disc_y = disc_loss(nets.d_y(y), nets.d_y(fake_y_detached))
        _check_finite({"disc_x": l_disc_x, "disc_y": l_disc_y})
        (cfg.lambda_disc * (l_disc_x + l_disc_y)).backward()
        state.optimizers["disc"].step()
    report["disc_x"] = _scalar(l_disc_x)
    report["disc_y"] = _scalar(l_disc_y)

    # (b) joint update of encoders, generators, kernels, head. Discriminators
    # participate in the graph but receive no gradients.
    set_requires_grad([nets.d_x, nets.d_y], False)
    opt = state.optimizers["main"]
    opt.zero_grad(set_to_none=True)

    z_x = nets.e_x(x)
    fake_y = nets.g_y(z_x)
    z_fake_y = nets.e_y(fake_y)  # shared by the x-cycle and the segmentation path
    rec_x = nets.g_x(z_fake_y)
    z_y = nets.e_y(y)
    fake_x = nets.g_x(z_y)
    rec_y = nets.g_y(nets.e_x(fake_x))

    l_cycle = cycle_direction_loss(rec_x, x) + cycle_direction_loss(rec_y, y)
    l_gen_x = gen_loss(nets.d_x(fake_x))
    l_gen_y = gen_loss(nets.d_y(fake_y))
    total = cfg.lambda_cycle * l_cycle + cfg.lambda_gen * (l_gen_x + l_gen_y)
    terms = {"cycle": l_cycle, "gen_x": l_gen_x, "gen_y": l_gen_y}

    if cfg.lambda_vmf != 0.0:
        l_vmf = cluster_loss(bank, normalize_features(z_y))  # real target features only
        total = total + cfg.lambda_vmf * l_vmf
        terms["vmf"] = l_vmf
    if cfg.lambda_seg != 0.0:
        comp = activations(bank, normalize_features(z_fake_y),
                           normalize_over_kernels=cfg.normalize_activations,
                           detach_kernels=not cfg.kernel_grad_from_seg)
        l_seg = dice_loss(head(comp), m_x)
        total = total + cfg.lambda_seg * l_seg
        terms["seg"] = l_seg
    _check_finite(terms)

    total.backward()
    opt.step()
    set_requires_grad([nets.d_x, nets.d_y], True)
    renormalize_kernels(bank)

    report["cycle"] = _scalar(l_cycle)
    report["gen_x"] = _scalar(l_gen_x)
    report["gen_y"] = _scalar(l_gen_y)
    report["vmf"] = _scalar(terms["vmf"]) if "vmf" in terms else 0.0
    report["seg"] = _scalar(terms["seg"]) if "seg" in terms else 0.0
    report["total"] = _scalar(total)
    return report


def _train_step_baseline(state, batch_x, batch_y) -> dict[str, float]:
    if state.mode is Mode.BASELINE_FS:
        if any(mask is None for _, mask in batch_y):
            raise ValueError("fully-supervised baseline requires target-domain masks")
        imgs = images_to_tensor([img for img, _ in batch_y])
        masks = masks_to_tensor([mask for _, mask in batch_y])
    else:
        imgs = images_to_tensor([img for img, _ in batch_x])
        masks = masks_to_tensor([mask for _, mask in batch_x])
    opt = state.optimizers["main"]
    opt.zero_grad(set_to_none=True)
    loss = dice_loss(state.unet(imgs), masks)
    _check_finite({"seg": loss})
    loss.backward()
    opt.step()
    return {"seg": _scalar(loss), "total": _scalar(loss)}


def _predict_batched(forward, images: list[Image], chunk: int = 8) -> list[np.ndarray]:
    preds = []
    with torch.no_grad():
        for start in range(0, len(images), chunk):
            probs = forward(images_to_tensor(images[start:start + chunk]))
            preds.extend(probs.argmax(dim=1).cpu().numpy().astype(np.int64))
    return preds


def predict_target(state: TrainState, images: list[Image]) -> list[np.ndarray]:
    """Inference masks for target-domain images (the deployment path)."""
    if state.mode is Mode.PROPOSED:
        def forward(batch):
            z = normalize_features(state.nets.e_y(batch))
            comp = activations(state.bank, z,
                               normalize_over_kernels=state.config.normalize_activations)
            return state.head(comp)
    else:
        forward = state.unet
    return _predict_batched(forward, images)


def predict_source_translated(state: TrainState, images: list[Image]) -> list[np.ndarray]:
    """Masks for source images through the translate-then-segment path."""
    nets, bank, head = state.nets, state.bank, state.head

    def forward(batch):
        z = normalize_features(nets.e_y(nets.g_y(nets.e_x(batch))))
        comp = activations(bank, z, normalize_over_kernels=state.config.normalize_activations)
        return head(comp)

    return _predict_batched(forward, images)


def _mean_foreground_dsc(preds: list[np.ndarray], masks: list[Mask], num_classes: int) -> float:
    scores = []
    for pred, mask in zip(preds, masks):
        per_class = [dsc(pred, mask.labels, c) / 100.0 for c in range(1, num_classes + 1)]
        scores.append(float(np.mean(per_class)))
    return float(np.mean(scores))


def _mean_cycle_error(state: TrainState, source: list[Image], target: list[Image]) -> float:
    nets = state.nets
    errors = []
    with torch.no_grad():
        for imgs, first_gen, second_gen, first_enc, second_enc in (
            (source, nets.g_y, nets.g_x, nets.e_x, nets.e_y),
            (target, nets.g_x, nets.g_y, nets.e_y, nets.e_x),
        ):
            for start in range(0, len(imgs), 8):
                batch = images_to_tensor(imgs[start:start + 8])
                rec = second_gen(second_enc(first_gen(first_enc(batch))))
                errors.append(float((rec - batch).abs().mean()))
    return float(np.mean(errors)) if errors else 0.0


def validate(
    state: TrainState,
    val_source: list[tuple[Image, Mask]],
    val_target: list[tuple[Image, Mask | None]],
) -> float:
    """Model-selection score; higher is better.

    Proposed mode: mean source-path DSC (translate-then-segment against
    source labels) minus recon_weight times the mean L1 cycle-reconstruction
    error over both domains' validation images. Target labels are never
    read. Baselines score plain DSC on their own training domain.
    """
    mode = state.mode
    if mode in (Mode.PROPOSED, Mode.BASELINE_NA) and not val_source:
        raise ValueError("empty source validation split")
    if mode in (Mode.PROPOSED, Mode.BASELINE_FS) and not val_target:
        raise ValueError("empty target validation split")
    num_classes = state.config.num_classes

    if mode is Mode.PROPOSED:
        src_images = [img for img, _ in val_source]
        src_masks = [mask for _, mask in val_source]
        preds = predict_source_translated(state, src_images)
        score_dsc = _mean_foreground_dsc(preds, src_masks, num_classes)
        recon = _mean_cycle_error(state, src_images, [img for img, _ in val_target])
        return score_dsc - state.config.recon_weight * recon
    if mode is Mode.BASELINE_FS:
        if any(mask is None for _, mask in val_target):
            raise ValueError("fully-supervised baseline requires target validation masks")
        preds = predict_target(state, [img for img, _ in val_target])
        return _mean_foreground_dsc(preds, [m for _, m in val_target], num_classes)
    preds = _predict_batched(state.unet, [img for img, _ in val_source])
    return _mean_foreground_dsc(preds, [m for _, m in val_source], num_classes)


def evaluate_split(
    state: TrainState,
    samples: list[tuple[Image, Mask]],
    postprocess: bool = False,
) -> list[ImageMetrics]:
    """Per-image DSC/ASSD of target-path predictions against ground truth."""
    if not samples:
        raise ValueError("empty evaluation split")
    num_classes = state.config.num_classes
    preds = predict_target(state, [img for img, _ in samples])
    rows: list[ImageMetrics] = []
    for pred, (image, mask) in zip(preds, samples):
        if mask is None:
            raise ValueError(f"image '{image.id}' has no ground-truth mask to evaluate against")
        if postprocess:
            pred = apply_largest_component(pred, num_classes)
        rows.extend(
            per_image_metrics(pred, mask.labels, num_classes, image.spacing,
                              image_id=image.id, fold=state.fold_index)
        )
    return rows


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(state: TrainState, path: Path | str, val_score: float | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for mname, module in state.models.items():
        for pname, tensor in module.state_dict().items():
            arrays[f"model/{mname}/{pname}"] = tensor.detach().cpu().numpy()
    for oname, opt in state.optimizers.items():
        for pname, param in state.param_names[oname]:
            opt_state = opt.state.get(param)
            if not opt_state:
                continue
            arrays[f"opt/{oname}/{pname}/step"] = opt_state["step"].detach().cpu().numpy()
            arrays[f"opt/{oname}/{pname}/exp_avg"] = opt_state["exp_avg"].detach().cpu().numpy()
            arrays[f"opt/{oname}/{pname}/exp_avg_sq"] = opt_state["exp_avg_sq"].detach().cpu().numpy()
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    meta = {
        "format": 1,
        "config": state.config.to_dict(),
        "mode": state.config.mode,
        "fold_index": state.fold_index,
        "epoch": state.epoch,
        "val_score": state.best_val if val_score is None else val_score,
        "numpy_rng": state.batch_rng.bit_generator.state,
    }
    ckpt.write_container(path, meta, arrays)


def load_checkpoint(path: Path | str, config: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState from a checkpoint file.

    Passing a config forces the architecture it describes; mismatched
    parameter shapes raise with a manifest diff naming every offender.
    """
    meta, arrays = ckpt.read_container(path)
    if config is None:
        config = TrainConfig.from_dict(meta["config"])
    state = build_state(config, meta["fold_index"])

    expected: dict[str, tuple] = {}
    for mname, module in state.models.items():
        for pname, tensor in module.state_dict().items():
            expected[f"model/{mname}/{pname}"] = tuple(tensor.shape)
    model_arrays = {k: v for k, v in arrays.items() if k.startswith("model/")}
    problems = ckpt.diff_array_sets(expected, model_arrays)
    if problems:
        raise ckpt.CheckpointError(
            f"checkpoint '{path}' does not match the configured architecture:\n  "
            + "\n  ".join(problems)
        )

    for mname, module in state.models.items():
        prefix = f"model/{mname}/"
        sd = {k[len(prefix):]: torch.from_numpy(arrays[k].copy()) for k in arrays if k.startswith(prefix)}
        module.load_state_dict(sd)
    for oname, opt in state.optimizers.items():
        for pname, param in state.param_names[oname]:
            key = f"opt/{oname}/{pname}/step"
            if key not in arrays:
                continue
            opt.state[param] = {
                "step": torch.from_numpy(arrays[key].copy()),
                "exp_avg": torch.from_numpy(arrays[f"opt/{oname}/{pname}/exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"opt/{oname}/{pname}/exp_avg_sq"].copy()),
            }
    torch.set_rng_state(torch.from_numpy(arrays["rng/torch"].copy()))
    state.batch_rng = np.random.default_rng()
    state.batch_rng.bit_generator.state = meta["numpy_rng"]
    state.epoch = int(meta["epoch"])
    state.best_val = float(meta["val_score"])
    return state


# ---------------------------------------------------------------------------
# Cross-validation orchestration


@dataclass
class FoldResult:
    fold_index: int
    best_val_score: float
    best_epoch: int
    checkpoint_path: Path
    log_path: Path
    test_rows: list[ImageMetrics]


@dataclass
class CrossValReport:
    config: TrainConfig
    fold_results: list[FoldResult]
    report: MetricsReport

    def per_fold_mean_dsc(self) -> list[float]:
        return [
            float(np.mean([c.per_fold_dsc[i] for c in self.report.classes]))
            for i in range(len(self.report.folds))
        ]


def _batches(state: TrainState, pairs: list, batch_size: int) -> list[list]:
    order = state.batch_rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    if len(shuffled) < batch_size:
        return [shuffled]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled) - batch_size + 1, batch_size)]


def _maybe_flip(state: TrainState, batch: list) -> list:
    if not state.config.augment_hflip:
        return batch
    out = []
    for image, mask in batch:
        if state.batch_rng.random() < 0.5:
            image, mask = hflip(image, mask)
        out.append((image, mask))
    return out


def train_fold(
    config: TrainConfig,
    fold_index: int,
    source: list[tuple[Image, Mask]],
    target: list[tuple[Image, Mask | None]],
    split_source: FoldSplit,
    split_target: FoldSplit,
    out_dir: Path | str,
    progress: bool = False,
) -> FoldResult:
    """Train one fold, logging per-epoch losses and keeping the best-validation
    checkpoint; evaluate that checkpoint on the fold's target test split."""
    fold_dir = Path(out_dir) / f"fold{fold_index}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    log_path = fold_dir / "train_log.csv"
    best_path = fold_dir / "best.ckpt"

    src_by_id = {img.id: (img, mask) for img, mask in source}
    tgt_by_id = {img.id: (img, mask) for img, mask in target}
    train_x = [src_by_id[i] for i in split_source.train_ids]
    val_x = [src_by_id[i] for i in split_source.val_ids]
    train_y = [tgt_by_id[i] for i in split_target.train_ids]
    val_y = [tgt_by_id[i] for i in split_target.val_ids]
    test_y = [tgt_by_id[i] for i in split_target.test_ids]

    state = build_state(config, fold_index)
    keys = loss_keys(state.mode)
    best_epoch = 0

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["epoch", *keys, "val_score"])
        for epoch in range(1, config.epochs + 1):
            state.epoch = epoch
            sums = dict.fromkeys(keys, 0.0)
            batches_x = _batches(state, train_x, config.batch_size)
            batches_y = _batches(state, train_y, config.batch_size)
            n_steps = min(len(batches_x), len(batches_y))
            for step in range(n_steps):
                bx = _maybe_flip(state, batches_x[step])
                by = _maybe_flip(state, batches_y[step])
                report = train_step(state, bx, by)
                for k in keys:
                    sums[k] += report[k]
            means = {k: sums[k] / max(1, n_steps) for k in keys}
            score = validate(state, val_x, val_y)
            writer.writerow([epoch, *[f"{means[k]:.12g}" for k in keys], f"{score:.12g}"])
            if score > state.best_val:
                state.best_val = score
                best_epoch = epoch
                save_checkpoint(state, best_path, val_score=score)
            if progress:
                print(f"[fold {fold_index}] epoch {epoch}/{config.epochs} "
                      f"total={means['total']:.4f} val={score:.4f}", flush=True)

    best_state = load_checkpoint(best_path)
    missing = [img.id for img, mask in test_y if mask is None]
    if missing:
        raise ValueError(f"target test ids lack ground-truth masks: {missing[:5]}")
    test_rows = evaluate_split(best_state, test_y)
    return FoldResult(
        fold_index=fold_index,
        best_val_score=state.best_val,
        best_epoch=best_epoch,
        checkpoint_path=best_path,
        log_path=log_path,
        test_rows=test_rows,
    )


def run_cross_validation(
    config: TrainConfig,
    data_root: Path | str,
    out_dir: Path | str,
    folds: list[int] | None = None,
    progress: bool = False,
) -> CrossValReport:
    """Train the configured mode across folds and aggregate target-test metrics."""
    manifest = DatasetManifest.load(data_root)
    config = replace(config, num_classes=manifest.num_classes)
    source = load_dataset(data_root, Domain.SOURCE, manifest)
    target = load_dataset(data_root, Domain.TARGET, manifest)
    if config.mode_enum is Mode.BASELINE_FS and any(mask is None for _, mask in target):
        raise ValueError("fully-supervised baseline requires target-domain masks")

    splits_source = make_folds([img.id for img, _ in source], config.num_folds,
                               config.seed, config.val_fraction)
    splits_target = make_folds([img.id for img, _ in target], config.num_folds,
                               config.seed, config.val_fraction)
    fold_list = list(range(config.num_folds)) if folds is None else list(folds)
    for f in fold_list:
        if not 0 <= f < config.num_folds:
            raise ValueError(f"fold index {f} out of range [0, {config.num_folds})")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [
        train_fold(config, f, source, target, splits_source[f], splits_target[f],
                   out_dir, progress=progress)
        for f in fold_list
    ]
    all_rows = [row for res in results for row in res.test_rows]
    report = aggregate(all_rows)
    write_metrics_csv(all_rows, out_dir / "per_image_metrics.csv")
    (out_dir / "report.txt").write_text(
        format_cross_val_report(report, manifest.class_names, config.mode) + "\n"
    )
    return CrossValReport(config=config, fold_results=results, report=report)


def format_cross_val_report(report: MetricsReport, class_names: list[str], mode: str) -> str:
    """Per-fold rows plus a mean/std row, one (DSC, ASSD) column pair per class."""
    names = [class_names[c.class_id - 1] if c.class_id <= len(class_names) else f"class{c.class_id}"
             for c in report.classes]
    header = [f"{mode:<14}"] + [f"{n:>9} DSC(%)   ASSD(mm)" for n in names]
    lines = ["  ".join(header)]
    for i, fold in enumerate(report.folds):
        cells = [f"fold {fold:<9}"]
        for c in report.classes:
            assd_v = c.per_fold_assd[i]
            assd_txt = "undef" if math.isnan(assd_v) else f"{assd_v:8.2f}"
            cells.append(f"{c.per_fold_dsc[i]:>16.2f}   {assd_txt:>8}")
        lines.append("  ".join(cells))
    cells = ["mean+-std     "]
    for c in report.classes:
        assd_txt = "undef" if math.isnan(c.assd_mean) else f"{c.assd_mean:.2f}+-{c.assd_std:.2f}"
        cells.append(f"{c.dsc_mean:>9.2f}+-{c.dsc_std:<5.2f}  {assd_txt:>8}")
    lines.append("  ".join(cells))
    if any(c.n_undefined_assd for c in report.classes):
        undef = ", ".join(f"{n}: {c.n_undefined_assd}" for n, c in zip(names, report.classes))
        lines.append(f"undefined ASSD entries excluded ({undef})")
    return "\n".join(lines)
