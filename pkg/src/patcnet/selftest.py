"""Fast oracle and invariant checks runnable from the CLI.

Each check recomputes an expected value through an independent route
(brute force, enumeration, finite differences) and compares it against the
production path.  Intended as a smoke gate, not a replacement for the full
test suite.
"""

from __future__ import annotations

import itertools

import numpy as np
import torch

from . import calibration, evaluation, prsm, trainer
from .encoder import EncoderConfig
from .prsm import MotorImageryDecoder, PrsmConfig


def check_decomposition() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        length = int(rng.integers(8, 64))
        dim = int(rng.integers(2, 16))
        z = torch.tensor(rng.standard_normal((length, dim)))
        low, high = prsm.moving_average_decompose(z, 5)
        worst = max(worst, float((low + high - z).abs().max()))
    return worst <= 1e-6, f"max reconstruction error {worst:.2e}"


def check_scan_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        b, length, dim, order = 1, int(rng.integers(4, 32)), 4, 4
        decay = torch.tensor(rng.uniform(0.0, 1.0, (b, length, dim, order)))
        drive = torch.tensor(rng.standard_normal((b, length, dim, order)))
        readout = torch.tensor(rng.standard_normal((b, length, order)))
        skip = torch.tensor(rng.standard_normal(dim))
        u = torch.tensor(rng.standard_normal((b, length, dim)))
        out = prsm.scan_core(decay, drive, readout, skip, u)
        h = np.zeros((dim, order))
        for l in range(length):
            h = decay[0, l].numpy() * h + drive[0, l].numpy()
            o = (h * readout[0, l].numpy()[None, :]).sum(-1) + skip.numpy() * u[0, l].numpy()
            err = np.abs(o - out[0, l].numpy()).max() / max(np.abs(o).max(), 1e-9)
            worst = max(worst, float(err))
    return worst <= 1e-5, f"max relative error vs naive recursion {worst:.2e}"


def check_gradients() -> tuple[bool, str]:
    torch.manual_seed(3)
    enc = EncoderConfig(temporal_kernel_sizes=(8, 6), filters_per_branch=3, embedding_dim=6)
    cfg = PrsmConfig(depth=1, embed_dim=6, state_dim=8, state_order=4)
    model = MotorImageryDecoder(enc, cfg, n_channels=4, class_count=2).double()
    x = torch.randn(2, 4, 64, dtype=torch.float64)
    y = torch.tensor([0, 1])

    loss = trainer.source_loss(model, x, y)
    loss.backward()
    rng = np.random.default_rng(5)
    checked, ok = 0, 0
    for _, param in model.named_parameters():
        flat = param.detach().reshape(-1)
        grads = param.grad.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            h = 1e-6 * max(1.0, abs(float(flat[idx])))
            with torch.no_grad():
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = float(trainer.source_loss(model, x, y))
                flat[idx] = orig - h
                down = float(trainer.source_loss(model, x, y))
                flat[idx] = orig
            fd = (up - down) / (2 * h)
            ad = float(grads[idx])
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)
            checked += 1
            ok += rel <= 1e-3
    return ok / checked >= 0.99, f"{ok}/{checked} sampled gradients within 1e-3"


def check_calibration_monotonicity() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    templates = calibration.RoiTemplateSet(
        templates=np.stack([calibration._normalize(rng.standard_normal(16)) for _ in range(2)]),
        thresholds=np.array([0.3, 0.3]),
        delta_min=0.1,
    )
    feats = np.stack([calibration._normalize(rng.standard_normal(16)) for _ in range(50)])
    p1 = rng.dirichlet((1.0, 1.0), size=50)
    states_lo = calibration.calibrate(p1, feats, templates, 0.55)
    states_hi = calibration.calibrate(p1, feats, templates, 0.75)
    subset = all(
        lo.accepted or not hi.accepted for lo, hi in zip(states_lo, states_hi)
    )
    argmax_ok = all(
        (not s.accepted) or s.calibrated_label.argmax() == int(np.argmax(p))
        for s, p in zip(states_lo, p1)
    )
    return subset and argmax_ok, "acceptance shrinks with tau_p; labels follow argmax"


def check_metrics() -> tuple[bool, str]:
    conf_result = evaluation.compute_metrics(
        np.array([0] * 15 + [1] * 5 + [0] * 5 + [1] * 15),
        np.array([0] * 20 + [1] * 20),
        2,
    )
    ok = abs(conf_result.accuracy - 0.75) < 1e-12 and abs(conf_result.kappa - 0.5) < 1e-12
    return ok, f"accuracy {conf_result.accuracy}, kappa {conf_result.kappa}"


def check_wilcoxon() -> tuple[bool, str]:
    stat, p = evaluation.wilcoxon_signed_rank(
        np.array([1.0, 2, 3, 4, 5, 6]), np.zeros(6)
    )
    exact_ok = abs(p - 2.0 / 64.0) < 1e-12 and stat == 21.0
    rng = np.random.default_rng(17)
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    stat2, p2 = evaluation.wilcoxon_signed_rank(a, b)
    diffs = (a - b)[(a - b) != 0]
    from scipy.stats import rankdata

    ranks = rankdata(np.abs(diffs))
    stats_enum = [
        float(ranks[np.array(signs) > 0].sum())
        for signs in itertools.product((-1, 1), repeat=diffs.size)
    ]
    n_total = len(stats_enum)
    p_le = sum(s <= stat2 for s in stats_enum) / n_total
    p_ge = sum(s >= stat2 for s in stats_enum) / n_total
    p_enum = min(1.0, 2.0 * min(p_le, p_ge))
    return exact_ok and abs(p2 - p_enum) < 1e-12, f"exact p matches enumeration ({p2:.5f})"


CHECKS = [
    ("decomposition reconstruction", check_decomposition),
    ("state-scan vs naive recursion", check_scan_oracle),
    ("gradients vs finite differences", check_gradients),
    ("calibration monotonicity", check_calibration_monotonicity),
    ("metric oracles", check_metrics),
    ("wilcoxon exact enumeration", check_wilcoxon),
]


def run_selftest(verbose: bool = True) -> bool:
    """Run every check; returns True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
