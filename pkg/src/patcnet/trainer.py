"""Two-stage training: source-only warm-up, then joint adaptation with
calibrated target pseudo-labels.

The total adaptation objective is alpha * source loss + (1 - alpha) *
target loss, where the target loss sums cross-entropy over accepted
pseudo-labeled trials normalized by the total target count.  Pseudo-labels
are refreshed from fresh model probabilities after every epoch beyond
warm-up.  Runs are deterministic given the seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import calibration
from .calibration import PseudoLabelState, RoiTemplateSet
from .encoder import EncoderConfig
from .errors import CheckpointFormatError, ConfigurationError, DataError, LeakageError
from .prsm import MotorImageryDecoder, PrsmConfig
from .signals import TrialSet

VARIANTS = ("full", "source_only", "no_pgtc", "no_roi", "no_dynamic", "no_rhythm")

PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"PATCNET-CKPT-1\n"


@dataclass
class TrainConfig:
    alpha: float = 0.98
    tau_p: float = 0.60
    delta_min: float = 0.50
    warmup_epochs: int = 25
    max_epochs: int = 200
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    batch_size: int | None = 16  # None = full batch
    seed: int = 0
    dataset_profile: str = "custom"
    variant: str = "full"
    normalize_target_by_accepted: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant '{self.variant}' (choose from {VARIANTS})")
        if self.variant == "source_only":
            self.alpha = 1.0
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError("alpha must lie in (0, 1]")
        if self.warmup_epochs >= self.max_epochs:
            raise ConfigurationError("warmup_epochs must be smaller than max_epochs")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive or None")


@dataclass
class Checkpoint:
    """Model parameters plus everything needed to rebuild and audit a run."""

    manifest: dict
    tensors: dict[str, np.ndarray]

    def digest(self) -> str:
        return _digest_arrays(self.tensors)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_log: list[dict]
    model: MotorImageryDecoder
    templates: RoiTemplateSet | None = None
    states: list[PseudoLabelState] | None = field(default=None, repr=False)


def standardize(data: np.ndarray) -> np.ndarray:
    """Per-trial, per-channel zero mean / unit variance (input-only transform)."""
    mean = data.mean(axis=-1, keepdims=True)
    std = data.std(axis=-1, keepdims=True)
    return (data - mean) / np.maximum(std, 1e-8)


def trials_to_tensor(ts: TrialSet, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.as_tensor(standardize(ts.data_array().astype(np.float64)), dtype=dtype)


def onehot(labels: torch.Tensor, class_count: int) -> torch.Tensor:
    eye = torch.eye(class_count, dtype=torch.get_default_dtype())
    return eye[labels]


def cross_entropy(probs: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy from probabilities, logs clamped at 1e-12."""
    logp = torch.log(probs.clamp_min(PROB_FLOOR))
    return -(target_onehot.to(probs.dtype) * logp).sum(-1).mean()


def source_loss(model: MotorImageryDecoder, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over a labeled source batch."""
    if labels.numel() != x.shape[0]:
        raise DataError("labels must align with the batch")
    probs = model.predict_proba(x)
    return cross_entropy(probs, onehot(labels, model.class_count).to(probs.dtype))


def target_loss(
    model: MotorImageryDecoder,
    x: torch.Tensor,
    states: list[PseudoLabelState],
    normalize_by_accepted: bool = False,
) -> torch.Tensor:
    """Pseudo-label loss: sum of accepted cross-entropies over the total
    trial count (or the accepted count when the flag is set); 0 when no
    trial is accepted."""
    if len(states) != x.shape[0]:
        raise DataError(f"{len(states)} pseudo-label states vs batch of {x.shape[0]}")
    mask = torch.tensor([s.accepted for s in states], dtype=torch.bool)
    if not mask.any():
        return torch.zeros((), dtype=x.dtype)
    labels = np.stack([s.calibrated_label for s in states])
    probs = model.predict_proba(x[mask])
    targets = torch.as_tensor(labels[mask.numpy()], dtype=probs.dtype)
    logp = torch.log(probs.clamp_min(PROB_FLOOR))
    total = -(targets * logp).sum()
    denom = int(mask.sum()) if normalize_by_accepted else len(states)
    return total / denom


def _digest_arrays(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def _model_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in model.state_dict().items()
    }


def predict_proba_set(model: MotorImageryDecoder, x: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        return model.predict_proba(x).double().numpy()


def _validate_fold_inputs(source: TrialSet, target: TrialSet) -> None:
    overlap = set(source.subject_ids()) & set(target.subject_ids())
    if overlap:
        raise LeakageError(f"subjects appear in both source and target: {sorted(overlap)}")
    if any(t.label is not None for t in target.trials):
        raise LeakageError("target trials must be label-stripped before training")
    if source.n_channels != target.n_channels or source.montage != target.montage:
        raise DataError("source and target montages differ")
    if source.n_samples != target.n_samples:
        raise DataError("source and target trial lengths differ")


def train_fold(
    source: TrialSet,
    target: TrialSet,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig | None = None,
    prsm_cfg: PrsmConfig | None = None,
) -> TrainResult:
    """Train one fold: warm-up on source labels, then joint adaptation.

    Returns the final checkpoint, a per-epoch log (losses, acceptance
    diagnostics, parameter digest), and the live model.
    """
    _validate_fold_inputs(source, target)
    encoder_cfg = encoder_cfg or EncoderConfig()
    if prsm_cfg is None:
        prsm_cfg = PrsmConfig(embed_dim=encoder_cfg.embedding_dim)
    if cfg.variant == "no_rhythm" and prsm_cfg.use_rhythm_context:
        prsm_cfg = PrsmConfig(**{**asdict(prsm_cfg), "use_rhythm_context": False})

    # One intra-op thread: reruns are bit-identical regardless of how many
    # folds run concurrently, and small tensors gain nothing from threading.
    previous_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _train_fold_inner(source, target, cfg, encoder_cfg, prsm_cfg)
    finally:
        torch.set_num_threads(previous_threads)


def _train_fold_inner(
    source: TrialSet,
    target: TrialSet,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig,
    prsm_cfg: PrsmConfig,
) -> TrainResult:
    torch.manual_seed(cfg.seed)
    model = MotorImageryDecoder(encoder_cfg, prsm_cfg, source.n_channels, source.class_count)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )

    x_src = trials_to_tensor(source)
    y_src = torch.as_tensor(source.labels())
    x_tgt = trials_to_tensor(target)
    n_src, n_tgt = len(source), len(target)
    k = source.class_count
    y_src_onehot = onehot(y_src, k)

    rng_src, rng_tgt = (
        np.random.default_rng(child) for child in np.random.SeedSequence(cfg.seed).spawn(2)
    )
    batch = cfg.batch_size or n_src
    tgt_batch = min(cfg.batch_size or n_tgt, n_tgt)

    source_only = cfg.variant == "source_only"
    templates: RoiTemplateSet | None = None
    roi_tgt: np.ndarray | None = None
    states: list[PseudoLabelState] | None = None
    tgt_queue: list[np.ndarray] = []
    epoch_log: list[dict] = []

    def refresh_states() -> list[PseudoLabelState]:
        probs = predict_proba_set(model, x_tgt)
        if cfg.variant == "no_pgtc":
            return calibration.accept_all(probs)
        return calibration.calibrate(
            probs, roi_tgt, templates, cfg.tau_p, use_roi_gate=cfg.variant != "no_roi"
        )

    def next_target_batch() -> np.ndarray:
        nonlocal tgt_queue
        if not tgt_queue:
            perm = rng_tgt.permutation(n_tgt)
            tgt_queue = [
                perm[i : i + tgt_batch] for i in range(0, n_tgt, tgt_batch)
            ][::-1]
        return tgt_queue.pop()

    for ep in range(1, cfg.max_epochs + 1):
        adapting = ep > cfg.warmup_epochs and not source_only
        if adapting and templates is None and cfg.variant != "no_pgtc":
            # Parameters here equal the end-of-warm-up parameters, so this
            # matches building the templates at the last warm-up epoch.
            templates = calibration.build_templates(source, cfg.delta_min)
            roi_tgt = calibration.roi_features_for_set(target)
        if adapting and (states is None or cfg.variant != "no_dynamic"):
            states = refresh_states()

        perm = rng_src.permutation(n_src)
        step_src, step_tgt = [], []
        for i in range(0, n_src, batch):
            sb = torch.as_tensor(perm[i : i + batch])
            probs_s = model.predict_proba(x_src[sb])
            l_src = cross_entropy(probs_s, y_src_onehot[sb])
            if adapting:
                tb = next_target_batch()
                l_tgt = target_loss(
                    model,
                    x_tgt[torch.as_tensor(tb)],
                    [states[j] for j in tb],
                    cfg.normalize_target_by_accepted,
                )
                loss = cfg.alpha * l_src + (1.0 - cfg.alpha) * l_tgt
                step_tgt.append(float(l_tgt.detach()))
            else:
                loss = l_src
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step_src.append(float(l_src.detach()))

        loss_src = float(np.mean(step_src))
        loss_tgt = float(np.mean(step_tgt)) if step_tgt else 0.0
        if adapting:
            loss_total = cfg.alpha * loss_src + (1.0 - cfg.alpha) * loss_tgt
        else:
            loss_total = loss_src
        stats = calibration.acceptance_stats(states or [], k)
        epoch_log.append(
            {
                "epoch": ep,
                "loss_src": loss_src,
                "loss_tgt": loss_tgt,
                "loss_total": loss_total,
                "accepted_count": stats["accepted_count"] if states else 0,
                "per_class_accepted": stats["per_class_accepted"] if states else [0] * k,
                "mean_similarity": stats["mean_similarity"] if states else 0.0,
                "param_digest": _digest_arrays(_model_arrays(model)),
            }
        )

    checkpoint = checkpoint_from_model(
        model, cfg, encoder_cfg, prsm_cfg, epoch=cfg.max_epochs, epoch_log=epoch_log
    )
    return TrainResult(checkpoint, epoch_log, model, templates, states)


def checkpoint_from_model(
    model: MotorImageryDecoder,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig,
    prsm_cfg: PrsmConfig,
    epoch: int,
    epoch_log: list[dict] | None = None,
) -> Checkpoint:
    tensors = _model_arrays(model)
    diagnostics = [
        {key: row[key] for key in ("epoch", "accepted_count", "per_class_accepted", "mean_similarity")}
        for row in (epoch_log or [])
    ]
    manifest = {
        "format": "patcnet-checkpoint",
        "version": "1",
        "epoch": epoch,
        "seed": cfg.seed,
        "n_channels": model.n_channels,
        "class_count": model.class_count,
        "train_config": asdict(cfg),
        "encoder_config": asdict(encoder_cfg),
        "prsm_config": asdict(prsm_cfg),
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()
        ],
        "pseudo_label_history": diagnostics,
    }
    return Checkpoint(manifest, tensors)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Single file: magic, manifest length, manifest JSON, float32 payloads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_bytes = json.dumps(ckpt.manifest).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(manifest_bytes).to_bytes(8, "little"))
        fh.write(manifest_bytes)
        for entry in ckpt.manifest["tensors"]:
            fh.write(np.ascontiguousarray(ckpt.tensors[entry["name"]], dtype="<f4").tobytes())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError(f"{path}: not a recognized checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    length = int.from_bytes(raw[offset : offset + 8], "little")
    offset += 8
    try:
        manifest = json.loads(raw[offset : offset + length].decode())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: unreadable manifest: {exc}") from exc
    offset += length
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 4
        blob = raw[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointFormatError(f"{path}: truncated payload at tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4").reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(manifest, tensors)


def model_from_checkpoint(ckpt: Checkpoint) -> MotorImageryDecoder:
    m = ckpt.manifest
    encoder_cfg = EncoderConfig(**{
        **m["encoder_config"],
        "temporal_kernel_sizes": tuple(m["encoder_config"]["temporal_kernel_sizes"]),
    })
    prsm_kwargs = dict(m["prsm_config"])
    prsm_kwargs["slow_kernels"] = tuple(prsm_kwargs["slow_kernels"])
    prsm_kwargs["fast_kernels"] = tuple(prsm_kwargs["fast_kernels"])
    prsm_cfg = PrsmConfig(**prsm_kwargs)
    model = MotorImageryDecoder(encoder_cfg, prsm_cfg, m["n_channels"], m["class_count"])
    state = {name: torch.as_tensor(arr) for name, arr in ckpt.tensors.items()}
    model.load_state_dict(state)
    return model
