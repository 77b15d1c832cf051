import pytest
import torch
from hypothesis import given, settings, strategies as st

from mcspex.checks import run_check, tiny_config
from mcspex.config import ModelConfig, toy_config, variant_config
from mcspex.errors import ConfigError, InputTooShortError, UsageError
from mcspex.frontend import (MultiScaleDecoder, MultiScaleEncoder, MultiScaleFeatures, ScaleFuser,
                             TwinEncoder, num_frames)
from mcspex.model import build_model, parameter_registry


@pytest.fixture(scope="module")
def full_size_encoder():
    torch.manual_seed(0)
    return MultiScaleEncoder(ModelConfig())


class TestEncoder:
    def test_three_second_framing(self, full_size_encoder):
        with torch.no_grad():
            ms = full_size_encoder(torch.randn(24000))
        assert ms.shape == (256, 2399)
        assert all(m.shape == (256, 2399) for m in ms)
        assert num_frames(24000, ModelConfig()) == 2399

    def test_zero_wave(self, full_size_encoder):
        with torch.no_grad():
            ms = full_size_encoder(torch.zeros(400))
        assert all(torch.count_nonzero(m) == 0 for m in ms)

    def test_too_short(self, full_size_encoder):
        with pytest.raises(InputTooShortError):
            full_size_encoder(torch.zeros(159))
        full_size_encoder(torch.zeros(160))

    def test_nonnegative(self, full_size_encoder):
        with torch.no_grad():
            ms = full_size_encoder(torch.randn(1000))
        assert all((m >= 0).all() for m in ms)


class TestScaleFuser:
    def test_zero_params(self):
        fuser = ScaleFuser((3, 32, 32, 1), (3, 3, 3, 3))
        with torch.no_grad():
            for p in fuser.parameters():
                p.zero_()
            out = fuser(MultiScaleFeatures(*(torch.randn(8, 11) for _ in range(3))))
        assert out.shape == (8, 11) and torch.count_nonzero(out) == 0

    def test_full_size_shape(self):
        torch.manual_seed(0)
        fuser = ScaleFuser((3, 32, 32, 1), (3, 3, 3, 3))
        with torch.no_grad():
            out = fuser(MultiScaleFeatures(*(torch.rand(256, 300) for _ in range(3))))
        assert out.shape == (256, 300)

    def test_bad_schedule(self):
        with pytest.raises(ConfigError):
            ScaleFuser((3, 32, 2), (3, 3, 3))
        with pytest.raises(ConfigError):
            toy_config(fuser_channels=(2, 8, 1), fuser_kernels=(3, 3, 3))

    def test_gradcheck(self):
        assert all(r.passed for r in run_check("scalefuser"))


class TestTwinEncoder:
    cfg = tiny_config()

    def test_identical_inputs_identical_outputs(self):
        torch.manual_seed(1)
        twin = TwinEncoder(self.cfg)
        wave = torch.randn(50)
        S, R, _ = twin(wave, wave.clone())
        assert torch.equal(S, R)

    def test_registry_shared_once(self):
        model = build_model(variant_config(6, self.cfg))
        names = [n for n in parameter_registry(model) if n.startswith("frontend.")]
        assert any(n.startswith("frontend.fuser.") for n in names)
        assert not any("fuser_mix" in n or "fuser_ref" in n for n in names)
        enc = sum(p.numel() for n, p in parameter_registry(model).items() if n.startswith("frontend.encoder."))
        fuser = sum(p.numel() for n, p in parameter_registry(model).items() if n.startswith("frontend.fuser."))
        assert enc == self.cfg.filters_per_scale * sum(self.cfg.filter_lengths)
        assert fuser == sum(p.numel() for p in ScaleFuser(self.cfg.fuser_channels, self.cfg.fuser_kernels).parameters())

    def test_perturbing_shared_weight_moves_both_paths(self):
        torch.manual_seed(2)
        twin = TwinEncoder(self.cfg)
        mix, ref = torch.randn(60), torch.randn(48)
        with torch.no_grad():
            S0, R0, _ = twin(mix, ref)
            twin.fuser.weights[0][0, 0, 1, 1] += 0.5
            S1, R1, _ = twin(mix, ref)
        assert not torch.equal(S0, S1) and not torch.equal(R0, R1)

    def test_unshared_fusers_are_distinct(self):
        twin = TwinEncoder(self.cfg.replace(share_fuser_weights=False))
        assert twin.fuser_mix is not twin.fuser_ref

    def test_gradients_accumulate_from_both_paths(self):
        """One pass through the shared fuser equals the sum of the two per-path gradients."""
        torch.manual_seed(3)
        twin = TwinEncoder(self.cfg).double()
        mix = torch.randn(60, dtype=torch.float64)
        ref = torch.randn(48, dtype=torch.float64)
        w = twin.fuser.weights[1]

        S, R, _ = twin(mix, ref)
        (S.sum() + 2 * R.sum()).backward()
        joint = w.grad.clone()

        twin.zero_grad()
        S, _, _ = twin(mix, ref)
        S.sum().backward()
        g_mix = w.grad.clone()
        twin.zero_grad()
        _, R, _ = twin(mix, ref)
        (2 * R.sum()).backward()
        g_ref = w.grad.clone()
        torch.testing.assert_close(joint, g_mix + g_ref, rtol=1e-12, atol=1e-12)
        assert g_ref.abs().sum() > 0 and g_mix.abs().sum() > 0


class TestDecoder:
    def test_zero_features(self):
        dec = MultiScaleDecoder(ModelConfig())
        z = torch.zeros(256, 2399)
        with torch.no_grad():
            outs = dec(MultiScaleFeatures(z, z, z), 24000)
        assert all(o.shape == (24000,) and torch.count_nonzero(o) == 0 for o in outs)

    def test_raw_lengths_then_trim(self):
        cfg = ModelConfig(filters_per_scale=4)
        dec = MultiScaleDecoder(cfg)
        x = torch.rand(4, 2399)
        with torch.no_grad():
            raw = [torch.nn.functional.conv_transpose1d(x[None], w, stride=10).shape[-1]
                   for w in (dec.weight_small, dec.weight_middle, dec.weight_large)]
            outs = dec(MultiScaleFeatures(x, x, x), 24000)
        assert raw == [24000, 24060, 24140]
        assert all(o.shape == (24000,) for o in outs)

    def test_pads_when_short(self):
        dec = MultiScaleDecoder(tiny_config())
        x = torch.rand(4, 5)
        outs = dec(MultiScaleFeatures(x, x, x), 40)
        assert all(o.shape == (40,) for o in outs)
        assert torch.all(outs[0][(5 - 1) * 2 + 4:] == 0)

    def test_bad_out_len(self):
        dec = MultiScaleDecoder(tiny_config())
        x = torch.rand(4, 5)
        with pytest.raises(UsageError):
            dec(MultiScaleFeatures(x, x, x), 0)


@settings(max_examples=25, deadline=None)
@given(length=st.integers(160, 2000))
def test_length_and_alignment_contract(length):
    cfg = toy_config()
    torch.manual_seed(0)
    model = _cached_toy_model()
    with torch.no_grad():
        out = model(torch.randn(length), torch.randn(400))
    T = num_frames(length, cfg)
    assert out.features.shape == (cfg.filters_per_scale, T)
    assert all(m.shape == (cfg.filters_per_scale, T) for m in out.masks)
    assert all(e.shape == (length,) for e in out.estimates)


_MODEL = {}


def _cached_toy_model():
    if "toy" not in _MODEL:
        _MODEL["toy"] = build_model(toy_config())
    return _MODEL["toy"]
