import numpy as np
import pytest
import torch

from patcnet.encoder import EncoderConfig
from patcnet.errors import ConfigurationError
from patcnet.prsm import (
    ClassifierHead,
    ContextBuilder,
    MotorImageryDecoder,
    PrsmConfig,
    RhythmicStateBlock,
    SsmScan,
    classify,
    modulate_branches,
    moving_average_decompose,
    naive_linear_recurrence,
    parallel_linear_recurrence,
    scan_core,
)

TINY_ENC = EncoderConfig(
    temporal_kernel_sizes=(8, 6), filters_per_branch=3, spatial_multiplier=2,
    pooling_size=4, embedding_dim=6,
)
TINY_PRSM = PrsmConfig(depth=1, embed_dim=6, state_dim=8, state_order=4)


def zero_biases(module):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()


class TestDecomposition:
    def test_constant_sequence(self):
        v = torch.tensor([1.5, -2.0, 0.25])
        z = v.repeat(12, 1)
        low, high = moving_average_decompose(z, 5)
        assert torch.allclose(low, z)
        assert torch.all(high.abs() < 1e-12)

    def test_zero_input(self):
        low, high = moving_average_decompose(torch.zeros(10, 4), 5)
        assert torch.all(low == 0) and torch.all(high == 0)

    def test_matches_bruteforce_window_mean(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((16, 4))
        low, high = moving_average_decompose(torch.tensor(z), 5)
        half = 2
        padded = np.pad(z, ((half, half), (0, 0)), mode="reflect")
        expected = np.stack([padded[i : i + 5].mean(axis=0) for i in range(16)])
        assert np.abs(low.numpy() - expected).max() < 1e-12
        assert np.abs((low + high).numpy() - z).max() <= 1e-7

    def test_reconstruction_random_batch(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            length = int(rng.integers(4, 64))
            dim = int(rng.integers(1, 16))
            z = torch.tensor(rng.standard_normal((length, dim)) * 50)
            low, high = moving_average_decompose(z, 5)
            assert float((low + high - z).abs().max()) <= 1e-7

    def test_window_too_large(self):
        with pytest.raises(ConfigurationError):
            moving_average_decompose(torch.zeros(4, 2), 9)


class TestContext:
    def test_zero_input_zero_bias(self):
        torch.manual_seed(0)
        ctx = ContextBuilder(6, (5, 9), (3, 5))
        zero_biases(ctx)
        out = ctx(torch.zeros(1, 12, 6), torch.zeros(1, 12, 6))
        assert torch.all(out == 0)

    def test_shape_contract(self):
        torch.manual_seed(1)
        ctx = ContextBuilder(6, (5, 9, 13), (3, 5, 7))
        for length in (8, 21, 64):
            out = ctx(torch.randn(2, length, 6), torch.randn(2, length, 6))
            assert out.shape == (2, length, 6)

    def test_matches_straightline_transcription(self):
        torch.manual_seed(2)
        dim, length = 4, 10
        ctx = ContextBuilder(dim, (3, 5), (3,)).double()
        z_low = np.random.default_rng(3).standard_normal((length, dim))
        z_high = np.random.default_rng(4).standard_normal((length, dim))
        with torch.no_grad():
            got = ctx(torch.tensor(z_low).unsqueeze(0), torch.tensor(z_high).unsqueeze(0))

        def conv1d(x, conv):
            w = conv.weight.detach().numpy()
            b = conv.bias.detach().numpy()
            k = w.shape[2]
            pad = (k - 1) // 2
            xp = np.pad(x, ((pad, pad), (0, 0)))
            return np.stack(
                [np.einsum("oij,ji->o", w, xp[l : l + k]) + b for l in range(x.shape[0])]
            )

        def branch(x, mod):
            feats = np.concatenate([conv1d(x, c) for c in mod.convs], axis=1)
            return feats @ mod.proj.weight.detach().numpy().T + mod.proj.bias.detach().numpy()

        f_low = branch(z_low, ctx.slow)
        f_high = branch(z_high, ctx.fast)
        fused = (
            np.concatenate([f_low, f_high], axis=1) @ ctx.fuse.weight.detach().numpy().T
            + ctx.fuse.bias.detach().numpy()
        )
        expected = fused + 0.5 * (f_low + f_high)
        assert np.abs(got.squeeze(0).numpy() - expected).max() < 1e-10


class TestModulation:
    def test_zero_context_weights_give_constant_scaling(self):
        torch.manual_seed(3)
        w_scale = torch.nn.Linear(6, 8)
        w_bias = torch.nn.Linear(6, 8)
        with torch.no_grad():
            w_scale.weight.zero_(); w_scale.bias.zero_()
            w_bias.weight.zero_(); w_bias.bias.zero_()
        u = torch.randn(1, 10, 8)
        r = torch.randn(1, 10, 8)
        c = torch.randn(1, 10, 6)
        u_bar, r_bar = modulate_branches(u, r, c, w_scale, w_bias)
        assert torch.allclose(u_bar, 1.5 * u)  # sigmoid(0) = 0.5
        assert torch.allclose(r_bar, r)

    def test_sigmoid_floor(self):
        w_scale = torch.nn.Linear(1, 2, bias=False)
        w_bias = torch.nn.Linear(1, 2, bias=False)
        with torch.no_grad():
            w_scale.weight.fill_(-50.0)
            w_bias.weight.zero_()
        u = torch.ones(1, 3, 2)
        r = torch.zeros(1, 3, 2)
        u_bar, _ = modulate_branches(u, r, torch.ones(1, 3, 1), w_scale, w_bias)
        assert torch.allclose(u_bar, u, atol=1e-6)  # scale saturates at 1

    def test_matches_straightline_transcription(self):
        torch.manual_seed(4)
        w_scale = torch.nn.Linear(4, 6).double()
        w_bias = torch.nn.Linear(4, 6).double()
        rng = np.random.default_rng(5)
        u = rng.standard_normal((7, 6))
        r = rng.standard_normal((7, 6))
        c = rng.standard_normal((7, 4))
        with torch.no_grad():
            u_bar, r_bar = modulate_branches(
                torch.tensor(u)[None], torch.tensor(r)[None], torch.tensor(c)[None], w_scale, w_bias
            )
        s = 1.0 / (1.0 + np.exp(-(c @ w_scale.weight.detach().numpy().T + w_scale.bias.detach().numpy())))
        b = c @ w_bias.weight.detach().numpy().T + w_bias.bias.detach().numpy()
        assert np.abs(u_bar.squeeze(0).numpy() - u * (1 + s)).max() < 1e-12
        assert np.abs(r_bar.squeeze(0).numpy() - (r + b)).max() < 1e-12


class TestScan:
    def test_zero_decay_is_memoryless(self):
        rng = np.random.default_rng(6)
        b, length, dim, order = 1, 5, 3, 2
        drive = torch.tensor(rng.standard_normal((b, length, dim, order)))
        readout = torch.tensor(rng.standard_normal((b, length, order)))
        skip = torch.tensor(rng.standard_normal(dim))
        u = torch.tensor(rng.standard_normal((b, length, dim)))
        out = scan_core(torch.zeros(b, length, dim, order), drive, readout, skip, u)
        expected = (drive * readout[:, :, None, :]).sum(-1) + skip * u
        assert torch.allclose(out, expected)

    def test_single_step(self):
        rng = np.random.default_rng(7)
        decay = torch.tensor(rng.uniform(0, 1, (1, 1, 2, 3)))
        drive = torch.tensor(rng.standard_normal((1, 1, 2, 3)))
        readout = torch.tensor(rng.standard_normal((1, 1, 3)))
        skip = torch.tensor(rng.standard_normal(2))
        u = torch.tensor(rng.standard_normal((1, 1, 2)))
        out = scan_core(decay, drive, readout, skip, u)
        expected = (drive[:, 0] * readout[:, 0].unsqueeze(0)).sum(-1) + skip * u[:, 0]
        assert torch.allclose(out[:, 0], expected)

    def test_parallel_equals_naive(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            b = int(rng.integers(1, 3))
            length = int(rng.integers(1, 65))
            dim = int(rng.integers(1, 9))
            order = int(rng.integers(1, 9))
            decay = torch.tensor(rng.uniform(0, 1, (b, length, dim, order)))
            drive = torch.tensor(rng.standard_normal((b, length, dim, order)))
            naive = naive_linear_recurrence(decay, drive)
            par = parallel_linear_recurrence(decay, drive)
            denom = float(naive.abs().max()) or 1.0
            assert float((naive - par).abs().max()) / denom < 1e-5

    def test_causality_of_isolated_scan(self):
        torch.manual_seed(9)
        scan = SsmScan(4, 3).double()
        u = torch.randn(1, 20, 4, dtype=torch.float64)
        base = scan(u)
        for l_prime in (5, 13, 19):
            bumped = u.clone()
            bumped[0, l_prime] += 1.0
            out = scan(bumped)
            assert torch.equal(out[0, :l_prime], base[0, :l_prime])
            assert not torch.allclose(out[0, l_prime], base[0, l_prime])

    def test_scan_module_matches_explicit_recursion(self):
        torch.manual_seed(10)
        scan = SsmScan(4, 4).double()
        u = torch.randn(2, 16, 4, dtype=torch.float64)
        with torch.no_grad():
            got = scan(u).numpy()

        dt = np.log1p(np.exp(
            u.numpy() @ scan.dt_proj.weight.detach().numpy().T + scan.dt_proj.bias.detach().numpy()
        ))
        a = -np.exp(scan.a_log.detach().numpy())
        bsel = u.numpy() @ scan.b_proj.weight.detach().numpy().T + scan.b_proj.bias.detach().numpy()
        csel = u.numpy() @ scan.c_proj.weight.detach().numpy().T + scan.c_proj.bias.detach().numpy()
        skip = scan.skip.detach().numpy()
        expected = np.zeros_like(got)
        for batch in range(2):
            h = np.zeros((4, 4))
            for l in range(16):
                decay = np.exp(dt[batch, l][:, None] * a)
                drive = (dt[batch, l] * u.numpy()[batch, l])[:, None] * bsel[batch, l][None, :]
                h = decay * h + drive
                expected[batch, l] = h @ csel[batch, l] + skip * u.numpy()[batch, l]
        assert np.abs(got - expected).max() < 1e-10


def numpy_block_forward(block: RhythmicStateBlock, z: np.ndarray) -> np.ndarray:
    """Independent straight-line transcription of one block (float64)."""
    cfg = block.cfg
    length = z.shape[0]

    def lin(x, layer):
        return x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()

    def silu(x):
        return x / (1.0 + np.exp(-x))

    # layer norm (biased variance)
    mu = z.mean(-1, keepdims=True)
    var = z.var(-1, keepdims=True)
    zn = (z - mu) / np.sqrt(var + block.norm.eps)
    zn = zn * block.norm.weight.detach().numpy() + block.norm.bias.detach().numpy()

    u, r = np.split(lin(zn, block.in_proj), 2, axis=-1)

    if cfg.use_rhythm_context:
        half = cfg.lowpass_window // 2
        padded = np.pad(zn, ((half, half), (0, 0)), mode="reflect")
        z_low = np.stack(
            [padded[i : i + cfg.lowpass_window].mean(axis=0) for i in range(length)]
        )
        z_high = zn - z_low

        def conv1d(x, conv):
            w = conv.weight.detach().numpy()
            b = conv.bias.detach().numpy()
            k = w.shape[2]
            pad = (k - 1) // 2
            xp = np.pad(x, ((pad, pad), (0, 0)))
            return np.stack(
                [np.einsum("oij,ji->o", w, xp[l : l + k]) + b for l in range(length)]
            )

        def branch(x, mod):
            feats = np.concatenate([conv1d(x, c) for c in mod.convs], axis=1)
            return lin(feats, mod.proj)

        f_low = branch(z_low, block.context.slow)
        f_high = branch(z_high, block.context.fast)
        c_r = lin(np.concatenate([f_low, f_high], axis=1), block.context.fuse)
        c_r = c_r + 0.5 * (f_low + f_high)
        s = 1.0 / (1.0 + np.exp(-lin(c_r, block.w_scale)))
        u = u * (1.0 + s)
        r = r + lin(c_r, block.w_bias)

    # depthwise pre-encoding convolution + nonlinearity
    w = block.pre_conv.weight.detach().numpy()  # (di, 1, k)
    b = block.pre_conv.bias.detach().numpy()
    k = w.shape[2]
    pad = (k - 1) // 2
    up = np.pad(u, ((pad, pad), (0, 0)))
    u = np.stack(
        [(w[:, 0, :] * up[l : l + k].T).sum(axis=1) + b for l in range(length)]
    )
    u = silu(u)

    scan = block.scan
    dt = np.log1p(np.exp(lin(u, scan.dt_proj)))
    a = -np.exp(scan.a_log.detach().numpy())
    bsel = lin(u, scan.b_proj)
    csel = lin(u, scan.c_proj)
    skip = scan.skip.detach().numpy()
    h = np.zeros(a.shape)
    o = np.zeros_like(u)
    for l in range(length):
        decay = np.exp(dt[l][:, None] * a)
        drive = (dt[l] * u[l])[:, None] * bsel[l][None, :]
        h = decay * h + drive
        o[l] = h @ csel[l] + skip * u[l]

    out = lin(o * silu(r), block.out_proj)
    return z + out


class TestBlockAndModel:
    def test_block_matches_straightline_oracle(self):
        torch.manual_seed(11)
        block = RhythmicStateBlock(PrsmConfig(depth=1, embed_dim=4, state_dim=6,
                                              state_order=3, slow_kernels=(3, 5),
                                              fast_kernels=(3,))).double()
        z = np.random.default_rng(12).standard_normal((14, 4))
        with torch.no_grad():
            got = block(torch.tensor(z).unsqueeze(0)).squeeze(0).numpy()
        expected = numpy_block_forward(block, z)
        assert np.abs(got - expected).max() < 1e-10

    def test_no_rhythm_block_matches_oracle(self):
        torch.manual_seed(12)
        block = RhythmicStateBlock(
            PrsmConfig(depth=1, embed_dim=4, state_dim=6, state_order=3,
                       use_rhythm_context=False)
        ).double()
        z = np.random.default_rng(13).standard_normal((10, 4))
        with torch.no_grad():
            got = block(torch.tensor(z).unsqueeze(0)).squeeze(0).numpy()
        expected = numpy_block_forward(block, z)
        assert np.abs(got - expected).max() < 1e-10

    def test_zero_input_zero_bias_gives_zero_tokens(self):
        torch.manual_seed(13)
        block = RhythmicStateBlock(TINY_PRSM).double()
        zero_biases(block)
        out = block(torch.zeros(1, 12, 6, dtype=torch.float64))
        assert torch.all(out == 0)

    def test_shape_contract_default_config(self):
        torch.manual_seed(14)
        model = MotorImageryDecoder(EncoderConfig(), PrsmConfig(embed_dim=30), 30, 2)
        tokens = model.tokens(torch.randn(1, 30, 1000))
        assert tokens.shape == (1, 125, 30)

    def test_future_perturbation_locality(self):
        torch.manual_seed(15)
        cfg = PrsmConfig(depth=1, embed_dim=6, state_dim=8, state_order=4)
        block = RhythmicStateBlock(cfg).double()
        z = torch.randn(1, 60, 6, dtype=torch.float64)
        base = block(z)
        radius = cfg.locality_radius
        l_prime = 40
        bumped = z.clone()
        bumped[0, l_prime] += 3.0
        out = block(bumped)
        safe = l_prime - radius
        assert torch.allclose(out[0, :safe], base[0, :safe], atol=1e-12)

    def test_depth_stacking_preserves_shape(self):
        torch.manual_seed(16)
        model = MotorImageryDecoder(TINY_ENC, PrsmConfig(depth=3, embed_dim=6), 4, 2)
        out = model(torch.randn(2, 4, 64))
        assert out.shape == (2, 2)


class TestClassify:
    def test_uniform_on_zero_logits(self):
        head = ClassifierHead(6, 4)
        with torch.no_grad():
            head.proj.weight.zero_()
            head.proj.bias.zero_()
        p = classify(torch.randn(3, 10, 6), head)
        assert torch.allclose(p, torch.full((3, 4), 0.25))

    def test_saturation(self):
        p = torch.softmax(torch.tensor([[10.0, -10.0]]), dim=-1)
        assert abs(float(p[0, 0]) - 1.0) < 1e-4
        assert float(p[0, 1]) < 1e-4

    def test_simplex_and_oracle(self):
        torch.manual_seed(17)
        head = ClassifierHead(6, 3).double()
        tokens = torch.randn(5, 8, 6, dtype=torch.float64)
        with torch.no_grad():
            p = classify(tokens, head)
            logits_np = head(tokens).numpy()
        assert torch.all(p > 0) and torch.all(p < 1)
        assert torch.allclose(p.sum(-1), torch.ones(5, dtype=torch.float64), atol=1e-6)
        logits = logits_np
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        expected = shifted / shifted.sum(axis=1, keepdims=True)
        assert np.abs(p.numpy() - expected).max() < 1e-9
