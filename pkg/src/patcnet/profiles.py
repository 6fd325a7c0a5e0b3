"""Built-in configuration presets.

The two dataset profiles carry the published default adaptation settings
and the architectural defaults, so a run needs no config file at all.
Explicit config keys and CLI flags always override preset values.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Any

from .encoder import EncoderConfig
from .errors import ConfigurationError
from .prsm import PrsmConfig
from .synthgen import CohortSpec
from .trainer import TrainConfig

PROFILES: dict[str, dict[str, Any]] = {
    "xw": {
        "train": {
            "alpha": 0.98,
            "tau_p": 0.60,
            "delta_min": 0.50,
            "warmup_epochs": 25,
            "max_epochs": 200,
            "learning_rate": 0.001,
            "weight_decay": 0.001,
            "dataset_profile": "xw",
        },
        "input_shape": [30, 1000],
    },
    "s2019": {
        "train": {
            "alpha": 0.95,
            "tau_p": 0.60,
            "delta_min": 0.45,
            "warmup_epochs": 10,
            "max_epochs": 200,
            "learning_rate": 0.001,
            "weight_decay": 0.001,
            "dataset_profile": "s2019",
        },
        "input_shape": [63, 1708],
    },
    "custom": {"train": {"dataset_profile": "custom"}, "input_shape": None},
}


def resolve_config(
    profile: str = "custom",
    overrides: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Merge preset defaults with override sections into a full config dict.

    Sections: ``train``, ``encoder``, ``prsm``, ``cohort``, ``noise``.
    Returns plain dicts (JSON-serializable) so the resolved configuration
    can be echoed alongside run outputs.
    """
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile '{profile}' (choose from {sorted(PROFILES)})")
    overrides = overrides or {}
    for key in overrides:
        if key not in ("train", "encoder", "prsm", "cohort", "noise"):
            raise ConfigurationError(f"unknown config section '{key}'")

    train_kwargs = dict(PROFILES[profile]["train"])
    train_kwargs.update(overrides.get("train", {}))
    encoder_kwargs = dict(overrides.get("encoder", {}))
    prsm_kwargs = dict(overrides.get("prsm", {}))
    cohort_kwargs = dict(overrides.get("cohort", {}))

    try:
        train_cfg = TrainConfig(**train_kwargs)
        encoder_cfg = EncoderConfig(**encoder_kwargs)
        if "embed_dim" not in prsm_kwargs:
            prsm_kwargs["embed_dim"] = encoder_cfg.embedding_dim
        prsm_cfg = PrsmConfig(**prsm_kwargs)
        cohort_spec = CohortSpec(**cohort_kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad config key: {exc}") from exc

    resolved = {
        "profile": profile,
        "input_shape": PROFILES[profile]["input_shape"],
        "train": asdict(train_cfg),
        "encoder": asdict(encoder_cfg),
        "prsm": asdict(prsm_cfg),
        "cohort": asdict(cohort_spec),
        "noise": dict(overrides.get("noise", {})),
    }
    return resolved


def configs_from_resolved(resolved: dict[str, Any]) -> tuple[TrainConfig, EncoderConfig, PrsmConfig]:
    """Rebuild dataclass configs from a resolved (echoed) config dict."""
    train_cfg = TrainConfig(**resolved["train"])
    enc = dict(resolved["encoder"])
    enc["temporal_kernel_sizes"] = tuple(enc["temporal_kernel_sizes"])
    encoder_cfg = EncoderConfig(**enc)
    pk = dict(resolved["prsm"])
    pk["slow_kernels"] = tuple(pk["slow_kernels"])
    pk["fast_kernels"] = tuple(pk["fast_kernels"])
    prsm_cfg = PrsmConfig(**pk)
    return train_cfg, encoder_cfg, prsm_cfg
