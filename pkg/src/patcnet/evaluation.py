"""Leave-one-subject-out evaluation, metrics, significance testing, and
noise-robustness utilities.

Each subject serves once as the unlabeled target domain; the label-stripped
copy handed to the trainer is the leakage barrier.  Metrics are computed
from the confusion matrix; the Wilcoxon signed-rank test uses the exact
null distribution for small samples and a continuity-corrected normal
approximation otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.stats import rankdata

from .encoder import EncoderConfig
from .errors import ConfigurationError, DataError
from .prsm import MotorImageryDecoder, PrsmConfig
from .signals import Domain, EpochedTrial, TrialSet, strip_labels
from .trainer import Checkpoint, TrainConfig, train_fold, trials_to_tensor

EXACT_WILCOXON_LIMIT = 25


@dataclass
class LosoFold:
    target_subject_id: str
    source: TrialSet
    target_unlabeled: TrialSet
    target_labels: np.ndarray


@dataclass
class FoldResult:
    target_subject_id: str
    confusion: np.ndarray  # rows = true class, cols = predicted
    accuracy: float
    recall: float
    precision: float
    f1: float
    kappa: float


@dataclass
class NoiseSpec:
    kind: str = "drift"  # "drift" or "spike"
    amplitude: float = 1.0  # multiple of per-channel signal RMS
    drift_freq_hz: float = 0.3
    spike_rate_per_s: float = 1.0
    spike_width_ms: float = 50.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("drift", "spike"):
            raise ConfigurationError(f"unknown noise kind '{self.kind}'")
        if self.amplitude < 0:
            raise ConfigurationError("amplitude must be >= 0")


def loso_split(cohort: list[TrialSet]) -> list[LosoFold]:
    """One fold per subject; the target copy is label-stripped."""
    if len(cohort) < 2:
        raise ConfigurationError("LOSO needs at least 2 subjects")
    subject_of = []
    for ts in cohort:
        sids = ts.subject_ids()
        if len(sids) != 1:
            raise DataError(f"each cohort entry must hold one subject, got {sids}")
        subject_of.append(sids[0])
    if len(set(subject_of)) != len(subject_of):
        dupes = sorted({s for s in subject_of if subject_of.count(s) > 1})
        raise DataError(f"duplicate subject ids in cohort: {dupes}")

    folds = []
    for i, ts in enumerate(cohort):
        source_trials = [t for j, other in enumerate(cohort) if j != i for t in other.trials]
        source = TrialSet(
            [EpochedTrial(t.subject_id, t.data.copy(), t.label, Domain.SOURCE) for t in source_trials],
            ts.class_count,
            list(ts.montage),
            ts.sampling_rate_hz,
        )
        folds.append(
            LosoFold(
                target_subject_id=subject_of[i],
                source=source,
                target_unlabeled=strip_labels(ts),
                target_labels=ts.labels(),
            )
        )
    return folds


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    matrix = np.zeros((class_count, class_count), dtype=np.int64)
    for true, pred in zip(labels, predictions):
        matrix[true, pred] += 1
    return matrix


def _prf(confusion: np.ndarray, positive: int) -> tuple[float, float, float]:
    tp = confusion[positive, positive]
    fp = confusion[:, positive].sum() - tp
    fn = confusion[positive, :].sum() - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)


def compute_metrics(
    predictions: np.ndarray, labels: np.ndarray, class_count: int, subject_id: str = ""
) -> FoldResult:
    """Accuracy, precision/recall/F1 (class 1 positive for two classes,
    macro otherwise) and Cohen's kappa with marginal-product chance level."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0]} predictions vs {labels.shape[0]} labels")
    conf = confusion_matrix(predictions, labels, class_count)
    total = conf.sum()
    accuracy = float(np.trace(conf) / total) if total else 0.0

    if class_count == 2:
        precision, recall, f1 = _prf(conf, positive=1)
    else:
        parts = [_prf(conf, positive=k) for k in range(class_count)]
        precision, recall, f1 = (float(np.mean([p[i] for p in parts])) for i in range(3))

    p_observed = accuracy
    p_expected = float((conf.sum(axis=1) * conf.sum(axis=0)).sum() / total**2) if total else 0.0
    kappa = 0.0 if math.isclose(p_expected, 1.0) else (p_observed - p_expected) / (1.0 - p_expected)
    return FoldResult(subject_id, conf, accuracy, recall, precision, f1, float(kappa))


def _exact_signed_rank_p(ranks2: np.ndarray, w2: int) -> float:
    """Two-sided exact p for doubled rank sum ``w2`` given doubled ranks."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    n_assignments = counts.sum()
    p_le = counts[: w2 + 1].sum() / n_assignments
    p_ge = counts[w2:].sum() / n_assignments
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Paired two-sided Wilcoxon signed-rank test.

    Returns (W+, p): the rank sum of positive differences and the two-sided
    p-value.  Zero differences are dropped, tied magnitudes get average
    ranks, the null is enumerated exactly up to n = 25 and approximated by
    a continuity-corrected normal above that.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("paired score vectors must have equal length")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return 0.0, 1.0

    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())

    if n <= EXACT_WILCOXON_LIMIT:
        ranks2 = np.rint(2.0 * ranks).astype(np.int64)
        w2 = int(round(2.0 * w_plus))
        return w_plus, _exact_signed_rank_p(ranks2, w2)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - ((tie_counts**3 - tie_counts).sum()) / 48.0
    if variance <= 0:
        return w_plus, 1.0
    correction = 0.5 * np.sign(w_plus - mean)
    z = (w_plus - mean - correction) / math.sqrt(variance)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return w_plus, float(p)


def _biphasic(width: int) -> np.ndarray:
    """One full sine cycle: positive then negative lobe, unit peak."""
    return np.sin(2.0 * np.pi * np.arange(width) / width)


def inject_noise(ts: TrialSet, spec: NoiseSpec) -> TrialSet:
    """Corrupted evaluation copy of ``ts``; the input is never modified.

    Drift adds a per-channel slow sinusoid with random phase whose RMS is
    amplitude x the channel RMS; spikes add randomly placed biphasic
    transients with peak amplitude x the channel RMS.
    """
    if spec.amplitude == 0.0:
        trials = [
            EpochedTrial(t.subject_id, t.data.copy(), t.label, t.domain) for t in ts.trials
        ]
        return TrialSet(trials, ts.class_count, list(ts.montage), ts.sampling_rate_hz, ts.skipped)

    rng = np.random.default_rng(spec.seed)
    fs = ts.sampling_rate_hz
    trials = []
    for t in ts.trials:
        data = t.data.copy().astype(np.float64)
        n = t.n_samples
        times = np.arange(n) / fs
        for c in range(t.n_channels):
            rms = float(np.sqrt(np.mean(data[c] ** 2)))
            if rms == 0.0:
                continue
            if spec.kind == "drift":
                phase = rng.uniform(0.0, 2.0 * np.pi)
                peak = spec.amplitude * rms * math.sqrt(2.0)
                data[c] += peak * np.sin(2.0 * np.pi * spec.drift_freq_hz * times + phase)
            else:
                width = max(2, int(round(spec.spike_width_ms * fs / 1000.0)))
                count = rng.poisson(spec.spike_rate_per_s * n / fs)
                shape = _biphasic(width)
                for _ in range(count):
                    start = int(rng.integers(0, max(1, n - width)))
                    stop = min(n, start + width)
                    data[c, start:stop] += spec.amplitude * rms * shape[: stop - start]
        trials.append(EpochedTrial(t.subject_id, data, t.label, t.domain))
    return TrialSet(trials, ts.class_count, list(ts.montage), ts.sampling_rate_hz, ts.skipped)


def predict_labels(model: MotorImageryDecoder, ts: TrialSet) -> np.ndarray:
    with torch.no_grad():
        probs = model.predict_proba(trials_to_tensor(ts)).numpy()
    return probs.argmax(axis=1)


@dataclass
class LosoRun:
    fold_results: list[FoldResult]
    epoch_logs: dict[str, list[dict]]
    checkpoints: dict[str, "Checkpoint"] = field(repr=False, default_factory=dict)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.fold_results])

    def mean_accuracy(self) -> float:
        return float(self.accuracies.mean())


def _run_fold(payload) -> tuple[str, FoldResult, list[dict], "Checkpoint"]:
    """Train and score a single fold (top level so worker processes can run it)."""
    fold, cfg, encoder_cfg, prsm_cfg = payload
    tr = train_fold(fold.source, fold.target_unlabeled, cfg, encoder_cfg, prsm_cfg)
    preds = predict_labels(tr.model, fold.target_unlabeled)
    metrics = compute_metrics(
        preds, fold.target_labels, fold.source.class_count, fold.target_subject_id
    )
    return fold.target_subject_id, metrics, tr.epoch_log, tr.checkpoint


def run_loso(
    cohort: list[TrialSet],
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig | None = None,
    prsm_cfg: PrsmConfig | None = None,
    jobs: int = 1,
) -> LosoRun:
    """Train and evaluate every fold; per-fold seeds derive from cfg.seed,
    so results do not depend on scheduling or on ``jobs``."""
    folds = loso_split(cohort)
    payloads = [
        (fold, replace(cfg, seed=cfg.seed + index), encoder_cfg, prsm_cfg)
        for index, fold in enumerate(folds)
    ]
    if jobs > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        context = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
            outcomes = list(pool.map(_run_fold, payloads))
    else:
        outcomes = [_run_fold(p) for p in payloads]

    results = [metrics for _, metrics, _, _ in outcomes]
    logs = {sid: log for sid, _, log, _ in outcomes}
    checkpoints = {sid: ckpt for sid, _, _, ckpt in outcomes}
    return LosoRun(results, logs, checkpoints)


def run_ablation(
    cohort: list[TrialSet],
    variants: list[str],
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig | None = None,
    prsm_cfg: PrsmConfig | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Mean +/- std LOSO accuracy per variant, identical fold seeds across
    variants so comparisons are paired."""
    from .trainer import VARIANTS

    unique: list[str] = []
    for v in variants:
        if v in unique:
            warnings.warn(f"duplicate ablation variant '{v}' ignored", stacklevel=2)
            continue
        if v not in VARIANTS:
            raise ConfigurationError(f"unknown ablation variant '{v}' (choose from {VARIANTS})")
        unique.append(v)

    rows = []
    for variant in unique:
        run = run_loso(cohort, replace(cfg, variant=variant), encoder_cfg, prsm_cfg, jobs=jobs)
        accs = run.accuracies
        rows.append(
            {
                "variant": variant,
                "mean_accuracy": float(accs.mean()),
                "std_accuracy": float(accs.std()),
                "fold_accuracies": [float(x) for x in accs],
                "subjects": [f.target_subject_id for f in run.fold_results],
            }
        )
    return rows
