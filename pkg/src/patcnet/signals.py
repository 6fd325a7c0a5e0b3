"""EEG data model and preprocessing pipeline.

Continuous recordings are band-pass filtered (zero phase), decimated with
anti-alias filtering, common-average referenced, baseline corrected relative
to each trial onset, and finally cut into fixed-length epochs.  All
operations are pure: they return new objects and never mutate their inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import signal as sp_signal

from .errors import ConfigurationError, DataError, ShapeError

# Fixed sensorimotor electrode groups used by the ROI feature extractor.
ROI_LEFT = ("FC3", "C3", "CP3")
ROI_MIDDLE = ("FCz", "Cz", "CPz")
ROI_RIGHT = ("FC4", "C4", "CP4")
ROI_LABELS = ROI_LEFT + ROI_MIDDLE + ROI_RIGHT

# Fraction of each epoch used for baseline correction when no explicit
# window is given.
DEFAULT_BASELINE_FRACTION = 0.1


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.isfinite(data).all():
        raise DataError(f"{what} contains non-finite samples")


@dataclass
class RawRecording:
    """A continuous multi-channel recording with trial onset markers.

    ``data`` is channels x samples in microvolts.  ``trial_labels``, when
    present, align one-to-one with ``trial_onsets``.
    """

    subject_id: str
    channel_labels: list[str]
    sampling_rate_hz: float
    data: np.ndarray
    trial_onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    trial_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        self.trial_onsets = np.asarray(self.trial_onsets, dtype=np.int64)
        if self.data.ndim != 2:
            raise ShapeError(f"data must be 2D (channels, samples), got {self.data.shape}")
        if self.data.shape[0] != len(self.channel_labels):
            raise ShapeError(
                f"{self.data.shape[0]} data rows but {len(self.channel_labels)} channel labels"
            )
        if len(set(self.channel_labels)) != len(self.channel_labels):
            raise DataError("channel labels must be unique")
        if self.sampling_rate_hz <= 0:
            raise ConfigurationError("sampling_rate_hz must be positive")
        _check_finite(self.data, "recording")
        if (self.trial_onsets < 0).any() or (self.trial_onsets >= self.data.shape[1]).any():
            raise DataError("trial onsets fall outside the recording")
        if self.trial_labels is not None:
            self.trial_labels = np.asarray(self.trial_labels, dtype=np.int64)
            if self.trial_labels.shape != self.trial_onsets.shape:
                raise ShapeError("trial_labels must align 1:1 with trial_onsets")
            if (self.trial_labels < 0).any():
                raise DataError("class labels must be non-negative indices")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class EpochedTrial:
    """One EEG trial: channels x samples, optional class label, domain tag."""

    subject_id: str
    data: np.ndarray
    label: int | None
    domain: Domain

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or 0 in self.data.shape:
            raise ShapeError(f"trial data must be non-empty 2D, got {self.data.shape}")
        _check_finite(self.data, "trial")
        if isinstance(self.domain, str):
            self.domain = Domain(self.domain)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class TrialSet:
    """An ordered collection of trials sharing shape and montage."""

    trials: list[EpochedTrial]
    class_count: int
    montage: list[str]
    sampling_rate_hz: float
    skipped: int = 0

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ConfigurationError("class_count must be at least 2")
        shapes = {t.data.shape for t in self.trials}
        if len(shapes) > 1:
            raise ShapeError(f"trials have inconsistent shapes: {sorted(shapes)}")
        for t in self.trials:
            if t.n_channels != len(self.montage):
                raise ShapeError(
                    f"trial has {t.n_channels} channels but montage lists {len(self.montage)}"
                )
            if t.label is not None and t.label >= self.class_count:
                raise DataError(f"label {t.label} outside 0..{self.class_count - 1}")

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def n_channels(self) -> int:
        return len(self.montage)

    @property
    def n_samples(self) -> int:
        return self.trials[0].n_samples if self.trials else 0

    def subject_ids(self) -> list[str]:
        seen: list[str] = []
        for t in self.trials:
            if t.subject_id not in seen:
                seen.append(t.subject_id)
        return seen

    def labels(self) -> np.ndarray:
        """Labels as an int array; raises if any trial is unlabeled."""
        if any(t.label is None for t in self.trials):
            raise DataError("trial set contains unlabeled trials")
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def data_array(self) -> np.ndarray:
        """All trials stacked to (n_trials, channels, samples)."""
        return np.stack([t.data for t in self.trials]) if self.trials else np.zeros((0, 0, 0))


def strip_labels(ts: TrialSet, domain: Domain = Domain.TARGET) -> TrialSet:
    """Copy of ``ts`` with labels removed and the domain tag replaced."""
    trials = [
        EpochedTrial(t.subject_id, t.data.copy(), None, domain) for t in ts.trials
    ]
    return TrialSet(trials, ts.class_count, list(ts.montage), ts.sampling_rate_hz)


def bandpass_filter(rec: RawRecording, low_hz: float, high_hz: float) -> RawRecording:
    """Zero-phase band-pass: 4th-order Butterworth applied forward-backward."""
    nyquist = rec.sampling_rate_hz / 2.0
    if not (0.0 < low_hz < high_hz < nyquist):
        raise ConfigurationError(
            f"band edges must satisfy 0 < low < high < {nyquist} Hz, got ({low_hz}, {high_hz})"
        )
    _check_finite(rec.data, "recording")
    sos = sp_signal.butter(
        4, [low_hz, high_hz], btype="bandpass", fs=rec.sampling_rate_hz, output="sos"
    )
    filtered = sp_signal.sosfiltfilt(sos, rec.data, axis=1)
    return replace(rec, data=np.ascontiguousarray(filtered))


def resample(rec: RawRecording, target_hz: float) -> RawRecording:
    """Decimate to ``target_hz`` with anti-alias filtering.

    The output keeps floor(n * target/source) samples and trial onsets are
    rescaled by the same ratio.  Upsampling is rejected.
    """
    if target_hz > rec.sampling_rate_hz:
        raise ConfigurationError(
            f"upsampling not supported ({rec.sampling_rate_hz} Hz -> {target_hz} Hz)"
        )
    if target_hz <= 0:
        raise ConfigurationError("target_hz must be positive")
    if target_hz == rec.sampling_rate_hz:
        return replace(rec, data=rec.data.copy())
    ratio = Fraction(target_hz / rec.sampling_rate_hz).limit_denominator(10000)
    n_out = math.floor(rec.n_samples * target_hz / rec.sampling_rate_hz)
    out = sp_signal.resample_poly(rec.data, ratio.numerator, ratio.denominator, axis=1)
    out = np.ascontiguousarray(out[:, :n_out])
    onsets = np.floor(rec.trial_onsets * target_hz / rec.sampling_rate_hz).astype(np.int64)
    return replace(rec, data=out, trial_onsets=onsets, sampling_rate_hz=float(target_hz))


def car_and_baseline(
    rec: RawRecording, baseline_window: tuple[int, int] | None = None
) -> RawRecording:
    """Common average reference, then per-trial baseline correction.

    ``baseline_window`` is a (start, stop) sample range relative to each
    trial onset; each channel's mean over that window is subtracted from the
    span running from the onset to the next onset (or the end of the
    recording).  Without onsets the window is relative to sample 0 and the
    whole recording is corrected.  Default window: first 10% of the span.
    """
    data = rec.data - rec.data.mean(axis=0, keepdims=True)

    onsets = rec.trial_onsets if rec.trial_onsets.size else np.array([0], dtype=np.int64)
    order = np.argsort(onsets, kind="stable")
    sorted_onsets = onsets[order]
    bounds = np.append(sorted_onsets[1:], rec.n_samples)
    for onset, stop in zip(sorted_onsets, bounds):
        span = stop - onset
        if baseline_window is None:
            w0, w1 = 0, max(1, math.ceil(DEFAULT_BASELINE_FRACTION * span))
        else:
            w0, w1 = baseline_window
        if w1 <= w0:
            raise ConfigurationError(f"empty baseline window ({w0}, {w1})")
        if onset + w1 > rec.n_samples:
            raise ConfigurationError("baseline window overruns the recording")
        base = data[:, onset + w0 : onset + w1].mean(axis=1, keepdims=True)
        data[:, onset:stop] -= base
    return replace(rec, data=data)


def epoch(
    rec: RawRecording,
    epoch_len: int,
    domain: Domain = Domain.SOURCE,
    class_count: int | None = None,
) -> TrialSet:
    """Cut fixed-length trials at each onset; out-of-bounds onsets are skipped."""
    if epoch_len <= 0:
        raise ConfigurationError("epoch_len must be positive")
    trials: list[EpochedTrial] = []
    skipped = 0
    for i, onset in enumerate(rec.trial_onsets):
        if onset + epoch_len > rec.n_samples:
            skipped += 1
            continue
        label = None
        if rec.trial_labels is not None and domain is Domain.SOURCE:
            label = int(rec.trial_labels[i])
        trials.append(
            EpochedTrial(
                rec.subject_id,
                rec.data[:, onset : onset + epoch_len].copy(),
                label,
                domain,
            )
        )
    if class_count is None:
        if rec.trial_labels is not None and rec.trial_labels.size:
            class_count = max(2, int(rec.trial_labels.max()) + 1)
        else:
            class_count = 2
    return TrialSet(trials, class_count, list(rec.channel_labels), rec.sampling_rate_hz, skipped)


def preprocess_recording(
    rec: RawRecording,
    low_hz: float = 8.0,
    high_hz: float = 30.0,
    target_hz: float = 250.0,
    baseline_window: tuple[int, int] | None = None,
) -> RawRecording:
    """The standard continuous pipeline: band-pass, decimate, CAR + baseline."""
    out = bandpass_filter(rec, low_hz, high_hz)
    out = resample(out, target_hz)
    return car_and_baseline(out, baseline_window)


def preprocess_trials(
    ts: TrialSet,
    low_hz: float = 8.0,
    high_hz: float = 30.0,
    target_hz: float = 250.0,
    baseline_fraction: float = DEFAULT_BASELINE_FRACTION,
) -> TrialSet:
    """Apply the preprocessing pipeline to already-epoched trials.

    Each trial is treated as a short recording with a single onset at sample
    zero, so filtering is performed per trial.
    """
    if not 0.0 < baseline_fraction <= 1.0:
        raise ConfigurationError("baseline_fraction must lie in (0, 1]")
    out_trials: list[EpochedTrial] = []
    for t in ts.trials:
        rec = RawRecording(
            subject_id=t.subject_id,
            channel_labels=list(ts.montage),
            sampling_rate_hz=ts.sampling_rate_hz,
            data=t.data,
            trial_onsets=np.array([0], dtype=np.int64),
        )
        rec = bandpass_filter(rec, low_hz, high_hz)
        rec = resample(rec, target_hz)
        window = (0, max(1, math.ceil(baseline_fraction * rec.n_samples)))
        rec = car_and_baseline(rec, window)
        out_trials.append(EpochedTrial(t.subject_id, rec.data, t.label, t.domain))
    return TrialSet(out_trials, ts.class_count, list(ts.montage), float(target_hz), ts.skipped)
