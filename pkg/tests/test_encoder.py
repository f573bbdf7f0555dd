import numpy as np
import pytest
import torch

from oracles import conv3d_loops
from slicesr.encoder import Encoder, EncoderConfig, ResBlock, conv3d_forward, encode
from slicesr.gradcheck import check_gradients
from slicesr.training import l1_loss


def identity_kernel(c):
    w = torch.zeros(c, c, 3, 3, 3, dtype=torch.float64)
    for i in range(c):
        w[i, i, 1, 1, 1] = 1.0
    return w


def test_identity_kernel(rng):
    x = torch.from_numpy(rng.random((1, 2, 4, 5, 3)))
    out = conv3d_forward(x, identity_kernel(2), torch.zeros(2, dtype=torch.float64))
    assert torch.equal(out, x)


def test_all_ones_kernel_interior():
    x = torch.full((1, 1, 4, 4, 4), 0.3, dtype=torch.float64)
    out = conv3d_forward(x, torch.ones(1, 1, 3, 3, 3, dtype=torch.float64), None)
    assert out[0, 0, 1, 1, 1].item() == pytest.approx(27 * 0.3, abs=1e-14)


def test_conv_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    b = rng.normal(size=3)
    out = conv3d_forward(torch.from_numpy(x)[None], torch.from_numpy(w), torch.from_numpy(b))[0].numpy()
    assert np.abs(out - conv3d_loops(x, w, b)).max() < 1e-12


def test_conv_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        conv3d_forward(torch.zeros(1, 2, 3, 3, 3), torch.zeros(1, 3, 3, 3, 3), None)


def test_conv_linear_in_weights(rng):
    x = torch.from_numpy(rng.normal(size=(1, 2, 5, 4, 3)))
    w1, w2 = (torch.from_numpy(rng.normal(size=(2, 2, 3, 3, 3))) for _ in range(2))
    a, b = 0.7, -1.3
    lhs = conv3d_forward(x, a * w1 + b * w2, None)
    rhs = a * conv3d_forward(x, w1, None) + b * conv3d_forward(x, w2, None)
    assert (lhs - rhs).abs().max() < 1e-10


def _block(c, rng):
    blk = ResBlock(c)
    blk.conv0.reset_parameters(rng)
    blk.conv1.reset_parameters(rng)
    return blk


def test_resblock_zero_second_conv(rng):
    blk = _block(3, rng)
    with torch.no_grad():
        blk.conv1.weight.zero_()
        blk.conv1.bias.zero_()
    x = torch.from_numpy(rng.normal(size=(1, 3, 4, 4, 4)))
    assert torch.equal(blk(x), x)


def test_resblock_zero_input_zero_bias(rng):
    blk = _block(2, rng)
    with torch.no_grad():
        blk.conv0.bias.zero_()
        blk.conv1.bias.zero_()
    x = torch.zeros(1, 2, 3, 3, 3, dtype=torch.float64)
    assert torch.equal(blk(x), x)


def test_resblock_matches_composed_oracle(rng):
    blk = _block(2, rng)
    x = rng.normal(size=(2, 4, 4, 4))
    p = {n: t.detach().numpy() for n, t in blk.named_parameters()}
    h = np.maximum(conv3d_loops(x, p["conv0.weight"], p["conv0.bias"]), 0)
    expected = x + conv3d_loops(h, p["conv1.weight"], p["conv1.bias"])
    out = blk(torch.from_numpy(x)[None])[0].detach().numpy()
    assert np.abs(out - expected).max() < 1e-12


@pytest.mark.parametrize("n_blocks", [1, 2, 3])
def test_encode_identity_kernels(rng, n_blocks):
    # Traced by hand: head(x) = x; each block maps x >= 0 to x + relu(x) = 2x;
    # tail keeps 2^n x; the global skip adds head(x) = x.  Total (2^n + 1) x.
    enc = Encoder(EncoderConfig(1, n_blocks))
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
            if p.dim() == 5:
                p[0, 0, 1, 1, 1] = 1.0
    x = rng.random((4, 3, 5))
    out = encode(torch.from_numpy(x), enc)
    np.testing.assert_allclose(out[..., 0].detach().numpy(), (2**n_blocks + 1) * x, rtol=0, atol=1e-15)


@pytest.mark.parametrize("dims", [(8, 8, 5), (3, 3, 3), (5, 4, 7)])
def test_encode_preserves_shape(rng, dims):
    enc = Encoder(EncoderConfig(6, 1))
    enc.reset_parameters(rng)
    out = encode(torch.from_numpy(rng.random(dims)), enc)
    assert tuple(out.shape) == (*dims, 6)
    assert torch.isfinite(out).all()


def test_encode_deterministic(rng):
    enc = Encoder(EncoderConfig(4, 2))
    enc.reset_parameters(rng)
    x = torch.from_numpy(rng.random((6, 6, 4)))
    assert torch.equal(encode(x, enc), encode(x, enc))


def test_init_bounds():
    enc = Encoder(EncoderConfig(4, 1))
    enc.reset_parameters(np.random.default_rng(0))
    bound = 1 / np.sqrt(4 * 27)
    assert enc.blocks[0].conv0.weight.abs().max() <= bound
    assert enc.head.weight.abs().max() <= 1 / np.sqrt(27)


def test_encoder_gradient_check(rng):
    enc = Encoder(EncoderConfig(4, 2))
    enc.reset_parameters(rng)
    x = torch.from_numpy(rng.random((4, 4, 4)))
    target = torch.from_numpy(rng.random((4, 4, 4, 4)))
    report = check_gradients(lambda: l1_loss(encode(x, enc), target), dict(enc.named_parameters()))
    assert report.passed, report.format()
