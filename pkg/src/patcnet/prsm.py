"""Dual-timescale rhythmic state-space temporal model.

Each block layer-normalizes the token sequence, splits it into a slowly
varying component (centered moving average along the token axis) and the
fast residual, fuses both into a rhythmic context, and uses that context to
modulate the input drive and residual gate of a selective state-space scan.
A temporal mean-pool plus linear head turns the final tokens into class
probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncoderConfig, TokenEncoder
from .errors import ConfigurationError, NumericError, ShapeError


@dataclass
class PrsmConfig:
    depth: int = 2
    embed_dim: int = 30
    state_dim: int | None = None  # defaults to 2 * embed_dim
    state_order: int = 16
    slow_kernels: tuple[int, ...] = (5, 9, 13)
    fast_kernels: tuple[int, ...] = (3, 5, 7)
    lowpass_window: int = 5
    pre_kernel: int = 3
    use_rhythm_context: bool = True

    def __post_init__(self) -> None:
        self.slow_kernels = tuple(self.slow_kernels)
        self.fast_kernels = tuple(self.fast_kernels)
        if self.state_dim is None:
            self.state_dim = 2 * self.embed_dim
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.state_dim < self.embed_dim:
            raise ConfigurationError("state_dim must be >= embed_dim")
        if self.lowpass_window < 3 or self.lowpass_window % 2 == 0:
            raise ConfigurationError("lowpass_window must be odd and >= 3")
        if self.pre_kernel < 1 or self.pre_kernel % 2 == 0:
            raise ConfigurationError("pre_kernel must be odd")

    @property
    def locality_radius(self) -> int:
        """Tokens farther back than this cannot be affected by a perturbation."""
        context = max(self.slow_kernels + self.fast_kernels) if self.use_rhythm_context else 1
        window = self.lowpass_window if self.use_rhythm_context else 1
        return (window - 1) // 2 + (context - 1) // 2 + (self.pre_kernel - 1) // 2


def moving_average_decompose(z: torch.Tensor, window: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Split (..., L, D) into (low, high): centered moving average + residual.

    Reflect padding at the boundaries; low + high reconstructs the input to
    machine precision because high is computed as an exact difference.
    """
    length = z.shape[-2]
    if window >= 2 * length:
        raise ConfigurationError(f"window {window} too large for sequence length {length}")
    half = window // 2
    flat = z.reshape(-1, length, z.shape[-1]).transpose(1, 2)
    padded = F.pad(flat, (half, half), mode="reflect")
    kernel = torch.ones(flat.shape[1], 1, window, dtype=z.dtype, device=z.device) / window
    low = F.conv1d(padded, kernel, groups=flat.shape[1])
    low = low.transpose(1, 2).reshape(z.shape)
    return low, z - low


class _MultiScaleBranch(nn.Module):
    """Per-scale 1-D convolutions over the token axis, concatenated, then
    projected back to the embedding dimension."""

    def __init__(self, dim: int, kernels: tuple[int, ...]):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(dim, dim, k, padding=(k - 1) // 2) for k in kernels
        )
        self.proj = nn.Linear(dim * len(kernels), dim)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = z.transpose(1, 2)
        out = torch.cat([conv(x) for conv in self.convs], dim=1)
        return self.proj(out.transpose(1, 2))


class ContextBuilder(nn.Module):
    """Fuse slow and fast components into the rhythmic context.

    The context is a pointwise projection of the concatenated branch
    features plus their elementwise mean as a residual aggregation term.
    """

    def __init__(self, dim: int, slow_kernels: tuple[int, ...], fast_kernels: tuple[int, ...]):
        super().__init__()
        self.slow = _MultiScaleBranch(dim, slow_kernels)
        self.fast = _MultiScaleBranch(dim, fast_kernels)
        self.fuse = nn.Linear(2 * dim, dim)

    def forward(self, z_low: torch.Tensor, z_high: torch.Tensor) -> torch.Tensor:
        if z_low.shape != z_high.shape:
            raise ShapeError(f"component shapes differ: {z_low.shape} vs {z_high.shape}")
        f_low = self.slow(z_low)
        f_high = self.fast(z_high)
        return self.fuse(torch.cat([f_low, f_high], dim=-1)) + 0.5 * (f_low + f_high)


def modulate_branches(
    u: torch.Tensor, r: torch.Tensor, context: torch.Tensor,
    w_scale: nn.Linear, w_bias: nn.Linear,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Context-dependent scaling of the input drive and shift of the gate."""
    s = torch.sigmoid(w_scale(context))
    b = w_bias(context)
    return u * (1.0 + s), r + b


def naive_linear_recurrence(decay: torch.Tensor, drive: torch.Tensor) -> torch.Tensor:
    """Reference implementation: explicit position-by-position recursion
    h_l = decay_l * h_{l-1} + drive_l with h_0 = 0.  decay/drive: (B, L, D, N)."""
    batch, length, dim, order = decay.shape
    h = decay.new_zeros(batch, dim, order)
    states = []
    for l in range(length):
        h = decay[:, l] * h + drive[:, l]
        states.append(h)
    return torch.stack(states, dim=1)


def parallel_linear_recurrence(decay: torch.Tensor, drive: torch.Tensor) -> torch.Tensor:
    """Same recurrence evaluated as a log-depth inclusive prefix scan.

    Pairs compose as (a1, b1) then (a2, b2) -> (a2*a1, b2 + a2*b1); the
    decays stay in (0, 1] so the running products never amplify.
    """
    a, b = decay, drive
    length = a.shape[1]
    shift = 1
    while shift < length:
        a_tail = a[:, shift:] * a[:, :-shift]
        b_tail = b[:, shift:] + a[:, shift:] * b[:, :-shift]
        a = torch.cat([a[:, :shift], a_tail], dim=1)
        b = torch.cat([b[:, :shift], b_tail], dim=1)
        shift *= 2
    return b


def scan_core(
    decay: torch.Tensor,
    drive: torch.Tensor,
    readout: torch.Tensor,
    skip: torch.Tensor,
    u: torch.Tensor,
    recurrence=naive_linear_recurrence,
) -> torch.Tensor:
    """Causal linear recurrence with per-position state readout and a
    direct skip path.

    decay/drive: (B, L, D, N); readout: (B, L, N); skip: (D,); u: (B, L, D).
    """
    states = recurrence(decay, drive)
    return (states * readout.unsqueeze(2)).sum(-1) + skip * u


class SsmScan(nn.Module):
    """Selective state-space scan with input-dependent discretization.

    The step size comes from a softplus of a linear map of the input, the
    transition is the exponential of that step times a learned
    negative-real diagonal, and the input/output maps are linear in the
    current input.
    """

    def __init__(self, dim: int, order: int):
        super().__init__()
        self.dim = dim
        self.order = order
        self.dt_proj = nn.Linear(dim, dim)
        self.b_proj = nn.Linear(dim, order)
        self.c_proj = nn.Linear(dim, order)
        self.a_log = nn.Parameter(
            torch.log(torch.arange(1, order + 1, dtype=torch.float32)).repeat(dim, 1)
        )
        self.skip = nn.Parameter(torch.ones(dim))
        # Bias chosen so softplus(dt) starts inside [1e-3, 0.1].
        with torch.no_grad():
            dt = torch.exp(
                torch.rand(dim) * (torch.log(torch.tensor(0.1)) - torch.log(torch.tensor(1e-3)))
                + torch.log(torch.tensor(1e-3))
            )
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))
            nn.init.uniform_(self.dt_proj.weight, -0.01, 0.01)

    def materialize(
        self, u: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Input-dependent (decay, drive, readout) tensors for ``scan_core``."""
        dt = F.softplus(self.dt_proj(u))
        a = -torch.exp(self.a_log)
        decay = torch.exp(dt.unsqueeze(-1) * a)
        drive = (dt * u).unsqueeze(-1) * self.b_proj(u).unsqueeze(2)
        readout = self.c_proj(u)
        return decay, drive, readout

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        decay, drive, readout = self.materialize(u)
        out = scan_core(decay, drive, readout, self.skip, u, parallel_linear_recurrence)
        if not torch.isfinite(out).all():
            bad = (~torch.isfinite(out)).any(-1).any(0).nonzero()[0].item()
            raise NumericError(f"state scan overflowed at position {bad}")
        return out


class RhythmicStateBlock(nn.Module):
    """One residual block: normalize, decompose, build context, modulate,
    pre-encode, scan, gate, project back."""

    def __init__(self, cfg: PrsmConfig):
        super().__init__()
        self.cfg = cfg
        d, di = cfg.embed_dim, cfg.state_dim
        self.norm = nn.LayerNorm(d)
        self.in_proj = nn.Linear(d, 2 * di)
        if cfg.use_rhythm_context:
            self.context = ContextBuilder(d, cfg.slow_kernels, cfg.fast_kernels)
            self.w_scale = nn.Linear(d, di)
            self.w_bias = nn.Linear(d, di)
        self.pre_conv = nn.Conv1d(
            di, di, cfg.pre_kernel, padding=(cfg.pre_kernel - 1) // 2, groups=di
        )
        self.scan = SsmScan(di, cfg.state_order)
        self.out_proj = nn.Linear(di, d)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        zn = self.norm(z)
        u, r = self.in_proj(zn).chunk(2, dim=-1)
        if self.cfg.use_rhythm_context:
            z_low, z_high = moving_average_decompose(zn, self.cfg.lowpass_window)
            c_r = self.context(z_low, z_high)
            u, r = modulate_branches(u, r, c_r, self.w_scale, self.w_bias)
        u = F.silu(self.pre_conv(u.transpose(1, 2)).transpose(1, 2))
        o = self.scan(u)
        return z + self.out_proj(o * F.silu(r))


class ClassifierHead(nn.Module):
    """Temporal mean-pool over tokens followed by a linear map to logits."""

    def __init__(self, dim: int, class_count: int):
        super().__init__()
        self.proj = nn.Linear(dim, class_count)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.proj(tokens.mean(dim=1))


def classify(tokens: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    """Class probabilities for a (batch, L, D) token sequence."""
    return torch.softmax(head(tokens), dim=-1)


class MotorImageryDecoder(nn.Module):
    """Full decoding network: token encoder, stacked rhythmic state blocks,
    and the classifier head."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        prsm_cfg: PrsmConfig,
        n_channels: int,
        class_count: int,
    ):
        super().__init__()
        if prsm_cfg.embed_dim != encoder_cfg.embedding_dim:
            raise ConfigurationError(
                f"embed_dim mismatch: encoder {encoder_cfg.embedding_dim}, "
                f"temporal model {prsm_cfg.embed_dim}"
            )
        self.encoder_cfg = encoder_cfg
        self.prsm_cfg = prsm_cfg
        self.n_channels = n_channels
        self.class_count = class_count
        self.encoder = TokenEncoder(encoder_cfg, n_channels)
        self.blocks = nn.ModuleList(RhythmicStateBlock(prsm_cfg) for _ in range(prsm_cfg.depth))
        self.head = ClassifierHead(prsm_cfg.embed_dim, class_count)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        z = self.encoder(x)
        for block in self.blocks:
            z = block(z)
        return z

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.tokens(x))

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=-1)
