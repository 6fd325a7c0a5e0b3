"""Trial-bundle directory format.

A bundle is a directory holding ``meta.json`` plus one little-endian
float32 binary per subject (row-major ``trial x channel x sample``).  The
format is deliberately minimal so that other tooling can read it without
this package; round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import BundleFormatError
from .signals import Domain, EpochedTrial, TrialSet

FORMAT_VERSION = "1"
META_NAME = "meta.json"


def save_trial_bundle(ts: TrialSet, path: str | Path) -> Path:
    """Write ``ts`` to ``path`` (a directory, created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    subjects = []
    for sid in ts.subject_ids():
        trials = [t for t in ts.trials if t.subject_id == sid]
        payload = np.stack([t.data for t in trials]).astype("<f4")
        fname = f"subject_{sid}.f32"
        payload.tofile(root / fname)
        subjects.append(
            {
                "subject_id": sid,
                "file": fname,
                "channels": trials[0].n_channels,
                "samples": trials[0].n_samples,
                "trials": [
                    {"label": t.label, "domain": t.domain.value} for t in trials
                ],
            }
        )

    meta = {
        "format_version": FORMAT_VERSION,
        "class_count": ts.class_count,
        "montage": list(ts.montage),
        "sampling_rate_hz": ts.sampling_rate_hz,
        "subjects": subjects,
    }
    (root / META_NAME).write_text(json.dumps(meta, indent=2))
    return root


def load_trial_bundle(path: str | Path) -> TrialSet:
    """Read a bundle directory written by :func:`save_trial_bundle`."""
    root = Path(path)
    meta_path = root / META_NAME
    if not meta_path.exists():
        raise BundleFormatError(f"missing {META_NAME} in {root}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"unreadable {META_NAME}: {exc}") from exc

    for key in ("format_version", "class_count", "montage", "sampling_rate_hz", "subjects"):
        if key not in meta:
            raise BundleFormatError(f"{META_NAME} missing required key '{key}'")
    if meta["format_version"] != FORMAT_VERSION:
        raise BundleFormatError(
            f"unsupported bundle version '{meta['format_version']}' (reader supports '{FORMAT_VERSION}')"
        )

    trials: list[EpochedTrial] = []
    for sub in meta["subjects"]:
        for key in ("subject_id", "file", "channels", "samples", "trials"):
            if key not in sub:
                raise BundleFormatError(f"subject record missing key '{key}'")
        bin_path = root / sub["file"]
        if not bin_path.exists():
            raise BundleFormatError(f"missing payload file {bin_path}")
        raw = np.fromfile(bin_path, dtype="<f4")
        n_trials = len(sub["trials"])
        c, t = int(sub["channels"]), int(sub["samples"])
        expected = n_trials * c * t
        if raw.size != expected:
            raise BundleFormatError(
                f"{bin_path.name}: payload holds {raw.size} floats, metadata implies {expected}"
            )
        data = raw.reshape(n_trials, c, t)
        for i, trec in enumerate(sub["trials"]):
            label = trec.get("label")
            trials.append(
                EpochedTrial(
                    subject_id=str(sub["subject_id"]),
                    data=data[i],
                    label=None if label is None else int(label),
                    domain=Domain(trec.get("domain", "source")),
                )
            )

    return TrialSet(
        trials=trials,
        class_count=int(meta["class_count"]),
        montage=[str(m) for m in meta["montage"]],
        sampling_rate_hz=float(meta["sampling_rate_hz"]),
    )
