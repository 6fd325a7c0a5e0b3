"""Physiology-guided pseudo-label calibration.

Each trial is summarized by a unit-norm ROI feature built from power
envelopes of the left, right, and midline sensorimotor electrode groups
plus a bilateral asymmetry term.  Class templates averaged over labeled
source trials gate target pseudo-labels: a candidate is accepted only when
the prediction is confident AND its ROI feature is cosine-similar to the
template of the predicted class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import ConfigurationError, DataError, MontageError
from .signals import ROI_LEFT, ROI_MIDDLE, ROI_RIGHT, EpochedTrial, TrialSet

# Moving-average window of the power envelope (samples, tuned for 250 Hz)
# and the per-ROI resampled sequence length.
ENVELOPE_WINDOW = 25
ROI_POINTS = 32
DELTA_CAP = 0.99


@dataclass
class RoiFeature:
    """Unit-norm concatenation of [left, right, asymmetry, middle] envelopes."""

    vector: np.ndarray
    provenance: str = ""


@dataclass
class RoiTemplateSet:
    """Per-class unit-norm prototypes with adaptive acceptance thresholds."""

    templates: np.ndarray  # (K, d_r)
    thresholds: np.ndarray  # (K,)
    delta_min: float
    class_sims: list[np.ndarray] = field(default_factory=list)


@dataclass
class PseudoLabelState:
    """Calibration outcome for one target trial."""

    probabilities: np.ndarray
    candidate: int
    roi_similarity: float
    accepted: bool
    calibrated_label: np.ndarray  # one-hot of length K, or all zeros


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def _envelope(x: np.ndarray, window: int) -> np.ndarray:
    return uniform_filter1d(x * x, size=window, mode="nearest")


def _bin_means(x: np.ndarray, points: int) -> np.ndarray:
    return np.array([seg.mean() for seg in np.array_split(x, points)])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.dot(a, b) / max(denom, 1e-12))


def roi_features(
    trial: EpochedTrial,
    montage: list[str],
    env_window: int = ENVELOPE_WINDOW,
    points: int = ROI_POINTS,
    provenance: str = "",
) -> RoiFeature:
    """ROI feature of one trial.

    Group means -> power envelope (squared samples, moving-average smoothed)
    -> resampled to ``points`` bin means -> [L, R, |L-R|, M] -> L2 norm.
    The result is invariant to a global positive rescaling of the trial.
    """
    missing = [lab for group in (ROI_LEFT, ROI_MIDDLE, ROI_RIGHT) for lab in group if lab not in montage]
    if missing:
        raise MontageError(f"montage missing ROI electrodes: {missing}")
    if trial.n_samples < points:
        raise ConfigurationError(
            f"trial too short ({trial.n_samples} samples) for {points} ROI points"
        )
    groups = []
    for labels in (ROI_LEFT, ROI_MIDDLE, ROI_RIGHT):
        idx = [montage.index(lab) for lab in labels]
        mean_seq = trial.data[idx].mean(axis=0)
        groups.append(_bin_means(_envelope(mean_seq, env_window), points))
    left, middle, right = groups
    asym = np.abs(left - right)
    return RoiFeature(_normalize(np.concatenate([left, right, asym, middle])), provenance)


def roi_features_for_set(ts: TrialSet, **kwargs) -> np.ndarray:
    """(n_trials, d_r) matrix of ROI features for every trial in ``ts``."""
    feats = [
        roi_features(t, ts.montage, provenance=f"{t.subject_id}[{i}]", **kwargs).vector
        for i, t in enumerate(ts.trials)
    ]
    return np.stack(feats)


def build_templates(source: TrialSet, delta_min: float) -> RoiTemplateSet:
    """Class prototypes and adaptive thresholds from labeled source trials.

    The threshold of class k is max(delta_min, mean - std) of the cosine
    similarities between class-k features and the class prototype
    (population std), clamped to 0.99; single-trial classes fall back to
    delta_min.
    """
    labels = source.labels()
    feats = roi_features_for_set(source)
    k_count = source.class_count
    templates = np.zeros((k_count, feats.shape[1]))
    thresholds = np.zeros(k_count)
    class_sims: list[np.ndarray] = []
    for k in range(k_count):
        members = feats[labels == k]
        if members.shape[0] == 0:
            raise ConfigurationError(f"class {k} has no labeled source trials")
        templates[k] = _normalize(members.mean(axis=0))
        sims = np.array([cosine_similarity(m, templates[k]) for m in members])
        class_sims.append(sims)
        if members.shape[0] == 1:
            thresholds[k] = delta_min
        else:
            thresholds[k] = max(delta_min, float(sims.mean() - sims.std()))
        thresholds[k] = min(thresholds[k], DELTA_CAP)
    return RoiTemplateSet(templates, thresholds, delta_min, class_sims)


def calibrate(
    probabilities: np.ndarray,
    features: np.ndarray,
    templates: RoiTemplateSet,
    tau_p: float,
    use_roi_gate: bool = True,
) -> list[PseudoLabelState]:
    """Joint confidence + physiology acceptance for each target trial.

    A trial is accepted iff max_k p_k > tau_p and the ROI similarity to the
    predicted class template exceeds that class's threshold.  Rejected
    trials get the zero vector.  Argmax ties break toward the lowest index.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    k_count = probabilities.shape[1]
    if not (1.0 / k_count < tau_p < 1.0):
        raise ConfigurationError(f"tau_p must lie in (1/{k_count}, 1), got {tau_p}")
    if probabilities.shape[0] != features.shape[0]:
        raise DataError(
            f"{probabilities.shape[0]} probability rows vs {features.shape[0]} ROI features"
        )
    states = []
    for p, r in zip(probabilities, features):
        candidate = int(np.argmax(p))
        sim = cosine_similarity(r, templates.templates[candidate])
        accepted = float(p[candidate]) > tau_p
        if use_roi_gate:
            accepted = accepted and sim > float(templates.thresholds[candidate])
        onehot = np.zeros(k_count)
        if accepted:
            onehot[candidate] = 1.0
        states.append(PseudoLabelState(p.copy(), candidate, sim, accepted, onehot))
    return states


def accept_all(probabilities: np.ndarray) -> list[PseudoLabelState]:
    """Ungated pseudo-labels: every trial gets onehot(argmax p)."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    states = []
    for p in probabilities:
        candidate = int(np.argmax(p))
        onehot = np.zeros(p.shape[0])
        onehot[candidate] = 1.0
        states.append(PseudoLabelState(p.copy(), candidate, 1.0, True, onehot))
    return states


def refresh(
    states: list[PseudoLabelState],
    probabilities: np.ndarray,
    features: np.ndarray,
    templates: RoiTemplateSet,
    tau_p: float,
    use_roi_gate: bool = True,
) -> list[PseudoLabelState]:
    """Stateless recomputation of the acceptance set with fresh probabilities.

    No hysteresis: a previously accepted trial may be dropped.
    """
    if len(states) != probabilities.shape[0]:
        raise DataError(
            f"{len(states)} states vs {probabilities.shape[0]} probability rows"
        )
    return calibrate(probabilities, features, templates, tau_p, use_roi_gate)


def acceptance_stats(states: list[PseudoLabelState], class_count: int) -> dict:
    """Per-refresh diagnostics exported with the training log."""
    accepted = [s for s in states if s.accepted]
    per_class = [sum(1 for s in accepted if s.candidate == k) for k in range(class_count)]
    return {
        "accepted_count": len(accepted),
        "per_class_accepted": per_class,
        "mean_similarity": float(np.mean([s.roi_similarity for s in states])) if states else 0.0,
    }
