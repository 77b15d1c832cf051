import math

import torch

from mcspex import numcore as nc
from mcspex.checks import run_check, tiny_config
from mcspex.model import build_model
from mcspex.objective import cross_entropy
from mcspex.spkenc import ResNetBlock, SpeakerClassifier, SpeakerEncoder

f64 = torch.float64


def test_full_size_embedding_shape():
    torch.manual_seed(0)
    enc = SpeakerEncoder(256, 256, 3)
    with torch.no_grad():
        e = enc(torch.rand(256, 50))
    assert e.shape == (256,)


def test_mean_pool_is_permutation_invariant():
    gen = torch.Generator().manual_seed(2)
    x = torch.randn(5, 40, generator=gen, dtype=f64)
    perm = torch.randperm(40, generator=gen)
    torch.testing.assert_close(nc.mean_pool_time(x[:, perm]), nc.mean_pool_time(x), rtol=0, atol=1e-15)
    torch.testing.assert_close(nc.mean_pool_time(x), x.sum(1) / 40, rtol=0, atol=1e-15)


def test_zero_input_zero_biases_gives_zero_embedding():
    enc = SpeakerEncoder(8, 6, 2).double()
    with torch.no_grad():
        for name, p in enc.named_parameters():
            if name.endswith("bias") and "norm" not in name:
                p.zero_()
    e = enc(torch.zeros(8, 20, dtype=f64))
    assert torch.count_nonzero(e) == 0


def test_zero_convs_reduce_block_to_prelu(tgen):
    block = ResNetBlock(5).double()
    with torch.no_grad():
        for name in ("conv1_weight", "conv1_bias", "conv2_weight", "conv2_bias"):
            getattr(block, name).zero_()
    x = torch.randn(5, 12, generator=tgen, dtype=f64)
    expected = torch.where(x >= 0, x, 0.25 * x)
    assert torch.equal(block(x), expected)


def test_resnet_block_gradcheck():
    assert all(r.passed for r in run_check("resnet_block"))


def test_uniform_logits_give_log_k():
    clf = SpeakerClassifier(16, 8).double()
    with torch.no_grad():
        clf.bias.zero_()
    logits = clf(torch.zeros(16, dtype=f64))
    assert cross_entropy(logits, 3).item() == math.log(8)


def test_one_embedding_feeds_both_consumers():
    torch.manual_seed(4)
    model = build_model(tiny_config())
    out = model(torch.randn(60), torch.randn(50))
    assert torch.equal(out.logits, model.classifier(out.embedding))
    assert out.embedding.shape == (tiny_config().embedding_dim,)
    # the embedding-to-modulation maps receive gradient through the extraction path alone
    loss = sum(e.pow(2).sum() for e in out.estimates)
    consm = model.extractor.groups[0].consm
    g_scale, g_shift = torch.autograd.grad(loss, [consm.scale_weight, consm.shift_weight])
    assert g_scale.abs().sum() > 0 and g_shift.abs().sum() > 0
