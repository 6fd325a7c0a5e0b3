"""Synthetic multi-subject stroke-like EEG cohorts.

Generates recordings with planted class structure: a mu-band oscillation
over the sensorimotor electrodes whose amplitude drops over the hemisphere
contralateral to the imagined hand, a low-frequency "pathological" slow
wave on a randomly chosen affected hemisphere, 1/f background noise, and
per-subject gain/frequency jitter to create cross-subject shift.  Class 0
is left-hand imagery, class 1 right-hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .signals import ROI_LABELS, ROI_LEFT, ROI_RIGHT, RawRecording

# Portion of each trial during which the imagery modulation is active.
ACTIVE_FRACTION = 0.6


@dataclass
class CohortSpec:
    """Parameters of a synthetic cohort.

    ``erd_depth`` is the fraction by which the mu-band amplitude drops over
    the contralateral ROI during imagery; ``slow_wave_gain`` scales a 1-4 Hz
    component added to each subject's affected hemisphere;
    ``subject_jitter`` controls per-subject random gain and mu-frequency
    spread.
    """

    subject_count: int = 8
    trials_per_subject: int = 40
    channel_labels: list[str] = field(default_factory=lambda: list(ROI_LABELS))
    samples: int = 500
    sampling_rate_hz: float = 250.0
    erd_depth: float = 0.6
    slow_wave_gain: float = 1.0
    subject_jitter: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ConfigurationError("erd_depth must lie in [0, 1]")
        for name in ("subject_count", "trials_per_subject", "samples"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.sampling_rate_hz <= 0:
            raise ConfigurationError("sampling_rate_hz must be positive")
        missing = [lab for lab in ROI_LABELS if lab not in self.channel_labels]
        if missing:
            raise ConfigurationError(f"montage missing ROI labels: {missing}")


def _pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int, fs: float) -> np.ndarray:
    """White noise shaped by a 1/f amplitude envelope, unit RMS per channel."""
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / fs)
    envelope = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
    shaped = np.fft.irfft(spec * envelope, n=n_samples, axis=1)
    rms = np.sqrt(np.mean(shaped**2, axis=1, keepdims=True))
    return shaped / np.maximum(rms, 1e-12)


def _activity_gate(n_samples: int) -> np.ndarray:
    """1 inside the middle 60% of the trial, 0 outside, cosine-ramped edges."""
    gate = np.zeros(n_samples)
    start = int(round(n_samples * (1.0 - ACTIVE_FRACTION) / 2.0))
    stop = int(round(n_samples * (1.0 + ACTIVE_FRACTION) / 2.0))
    gate[start:stop] = 1.0
    ramp = max(2, int(round(0.05 * n_samples)))
    up = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, ramp)))
    gate[start : start + ramp] = np.minimum(gate[start : start + ramp], up)
    gate[stop - ramp : stop] = np.minimum(gate[stop - ramp : stop], up[::-1])
    return gate


def generate_cohort(spec: CohortSpec) -> list[RawRecording]:
    """Deterministically generate one recording per subject.

    Left-hand trials attenuate the mu oscillation over {FC4, C4, CP4} by
    ``erd_depth``; right-hand trials attenuate {FC3, C3, CP3}.
    """
    children = np.random.SeedSequence(spec.seed).spawn(spec.subject_count)
    fs = spec.sampling_rate_hz
    n_trials, n_samples = spec.trials_per_subject, spec.samples
    n_channels = len(spec.channel_labels)
    left_idx = [spec.channel_labels.index(lab) for lab in ROI_LEFT]
    right_idx = [spec.channel_labels.index(lab) for lab in ROI_RIGHT]
    gate = _activity_gate(n_samples)
    t = np.arange(n_samples) / fs

    recordings: list[RawRecording] = []
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)

        gain = max(0.2, 1.0 + spec.subject_jitter * rng.standard_normal())
        mu_freq = 10.0 + 2.0 * spec.subject_jitter * rng.standard_normal()
        mu_freq = float(np.clip(mu_freq, 8.5, 12.5))
        affected_right = bool(rng.integers(0, 2))
        affected_idx = right_idx if affected_right else left_idx
        channel_gain = 1.0 + 0.5 * spec.subject_jitter * rng.standard_normal(n_channels)
        noise_scale = max(0.3, 1.0 + 0.5 * spec.subject_jitter * rng.standard_normal())

        # Balanced labels, order shuffled per subject.
        labels = np.array([0] * (n_trials // 2) + [1] * (n_trials - n_trials // 2))
        rng.shuffle(labels)

        data = np.zeros((n_channels, n_trials * n_samples))
        for j, label in enumerate(labels):
            seg = slice(j * n_samples, (j + 1) * n_samples)
            trial = 4.0 * noise_scale * _pink_noise(rng, n_channels, n_samples, fs)

            # Baseline mu rhythm on all nine sensorimotor electrodes.
            mu_amp = 6.0
            contra_idx = right_idx if label == 0 else left_idx
            for c in left_idx + right_idx + [
                spec.channel_labels.index(lab) for lab in ("FCz", "Cz", "CPz")
            ]:
                phase = rng.uniform(0.0, 2.0 * np.pi)
                envelope = np.ones(n_samples)
                if c in contra_idx:
                    envelope = 1.0 - spec.erd_depth * gate
                trial[c] += mu_amp * envelope * np.sin(2.0 * np.pi * mu_freq * t + phase)

            # Pathological slow wave on the affected hemisphere.
            if spec.slow_wave_gain > 0.0:
                slow_freq = rng.uniform(1.0, 4.0)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                slow = spec.slow_wave_gain * 5.0 * np.sin(2.0 * np.pi * slow_freq * t + phase)
                trial[affected_idx] += slow

            data[:, seg] = trial

        data *= gain * channel_gain[:, None]
        onsets = np.arange(n_trials, dtype=np.int64) * n_samples
        recordings.append(
            RawRecording(
                subject_id=f"S{s:02d}",
                channel_labels=list(spec.channel_labels),
                sampling_rate_hz=fs,
                data=data,
                trial_onsets=onsets,
                trial_labels=labels.astype(np.int64),
            )
        )
    return recordings
