import math

import numpy as np
import pytest
import torch
from torch import nn

from mmfal import (
    FibrosisStage,
    ImageSample,
    ModalityKind,
    ModelConfig,
    MultiModalSample,
    SqueezeExcite,
    build_model,
    fuse_embeddings,
    global_average_pool,
    load_checkpoint,
    save_checkpoint,
)
from mmfal.backbones import TinyBackbone, build_backbone
from mmfal.errors import ConfigurationError
from mmfal.network import ChannelReducer, FusionNet, dropout_with_generator


def tiny_config(modalities=("LSTE",), **overrides) -> ModelConfig:
    defaults = dict(
        modalities=modalities,
        backbone="tiny",
        reduced_channels=16,
        se_ratio=4,
        dropout=0.5,
        input_size=32,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


# ---------------------------------------------------------------------------
# squeeze-excitation
# ---------------------------------------------------------------------------


def se_scalar_oracle(x, w0, b0, w1, b1, residual=False):
    """Independent pure-Python re-implementation of the attention block."""
    C, H, W = len(x), len(x[0]), len(x[0][0])
    hidden_dim = len(w0)
    avg = [sum(x[c][i][j] for i in range(H) for j in range(W)) / (H * W) for c in range(C)]
    hidden = [
        max(0.0, sum(w0[k][c] * avg[c] for c in range(C)) + b0[k]) for k in range(hidden_dim)
    ]
    gate = [
        1.0 / (1.0 + math.exp(-(sum(w1[c][k] * hidden[k] for k in range(hidden_dim)) + b1[c])))
        for c in range(C)
    ]
    out = [
        [[x[c][i][j] * gate[c] + (x[c][i][j] if residual else 0.0) for j in range(W)] for i in range(H)]
        for c in range(C)
    ]
    return out, gate


class TestSqueezeExcite:
    def test_zero_weights_halve_the_input(self):
        se = SqueezeExcite(channels=8, ratio=2)
        with torch.no_grad():
            for p in se.parameters():
                p.zero_()
        x = torch.randn(2, 8, 3, 3)
        out = se(x)
        assert torch.allclose(out, 0.5 * x, atol=1e-7)
        gates = se.attention(x)
        assert torch.allclose(gates, torch.full_like(gates, 0.5))

    def test_constant_channel_average_is_exact(self):
        se = SqueezeExcite(channels=4, ratio=2)
        x = torch.zeros(1, 4, 5, 5)
        x[0, 2] = 3.25
        pooled = x.mean(dim=(-2, -1))
        assert pooled[0, 2].item() == 3.25

    @pytest.mark.parametrize("residual", [False, True])
    def test_matches_scalar_loop_oracle(self, residual):
        torch.manual_seed(123)
        se = SqueezeExcite(channels=8, ratio=2, residual=residual)
        x = torch.randn(1, 8, 2, 2)
        out = se(x)[0]

        w0 = se.fc_reduce.weight.detach().tolist()
        b0 = se.fc_reduce.bias.detach().tolist()
        w1 = se.fc_expand.weight.detach().tolist()
        b1 = se.fc_expand.bias.detach().tolist()
        expected, gates = se_scalar_oracle(x[0].tolist(), w0, b0, w1, b1, residual=residual)

        assert np.allclose(out.detach().numpy(), np.array(expected), atol=1e-6)
        assert all(0.0 < g < 1.0 for g in gates)

    def test_attention_strictly_inside_unit_interval(self):
        torch.manual_seed(7)
        se = SqueezeExcite(channels=16, ratio=4)
        x = torch.randn(4, 16, 3, 3) * 5
        gates = se.attention(x)
        assert (gates > 0).all() and (gates < 1).all()
        # gating therefore shrinks magnitudes entrywise
        assert (se(x).abs() <= x.abs() + 1e-7).all()

    def test_rejects_indivisible_ratio(self):
        with pytest.raises(ConfigurationError):
            SqueezeExcite(channels=10, ratio=4)


def _central_difference_grads(fn, params, eps=1e-6):
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = fn().item()
            flat[i] = orig - eps
            minus = fn().item()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * eps)
        grads.append(g)
    return grads


def _max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = (a - n).abs() / (a.abs() + n.abs()).clamp(min=1e-6)
        worst = max(worst, err.max().item())
    return worst


class TestGradients:
    def test_se_block_matches_finite_differences(self):
        torch.manual_seed(5)
        se = SqueezeExcite(channels=8, ratio=2).double()
        x = torch.randn(1, 8, 3, 3, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(1, 8, 3, 3, dtype=torch.float64)

        def loss_fn():
            return (se(x) * weights).sum()

        loss = loss_fn()
        params = [x] + list(se.parameters())
        analytic = torch.autograd.grad(loss, params)
        numeric = _central_difference_grads(loss_fn, params)
        assert _max_relative_error(analytic, numeric) <= 1e-4

    def test_classifier_matches_finite_differences(self):
        torch.manual_seed(6)
        head = nn.Linear(12, 5).double()
        v = torch.randn(2, 12, dtype=torch.float64, requires_grad=True)
        target = torch.tensor([1, 4])

        def loss_fn():
            return nn.functional.cross_entropy(head(v), target)

        loss = loss_fn()
        params = [v] + list(head.parameters())
        analytic = torch.autograd.grad(loss, params)
        numeric = _central_difference_grads(loss_fn, params)
        assert _max_relative_error(analytic, numeric) <= 1e-4


# ---------------------------------------------------------------------------
# reduction, pooling, fusion, classification
# ---------------------------------------------------------------------------


class TestChannelReducer:
    def test_identity_initialized_reduction_is_identity(self):
        reducer = ChannelReducer(6, 6)
        with torch.no_grad():
            reducer.conv.weight.copy_(torch.eye(6).view(6, 6, 1, 1))
            reducer.conv.bias.zero_()
        x = torch.randn(2, 6, 4, 4)
        assert torch.allclose(reducer(x), x, atol=1e-6)

    def test_zero_initialized_reduction_is_zero(self):
        reducer = ChannelReducer(8, 4)
        with torch.no_grad():
            reducer.conv.weight.zero_()
            reducer.conv.bias.zero_()
        x = torch.randn(2, 8, 4, 4)
        assert torch.equal(reducer(x), torch.zeros(2, 4, 4, 4))

    def test_spatial_dims_unchanged(self):
        reducer = ChannelReducer(32, 16)
        out = reducer(torch.randn(1, 32, 8, 8))
        assert out.shape == (1, 16, 8, 8)


class TestGlobalPool:
    def test_constant_channel(self):
        x = torch.full((1, 3, 4, 4), 2.0)
        assert torch.equal(global_average_pool(x), torch.full((1, 3), 2.0))

    def test_one_by_one_identity(self):
        x = torch.randn(1, 256, 1, 1)
        assert torch.equal(global_average_pool(x), x.view(1, 256))

    def test_arithmetic_mean(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert global_average_pool(x).item() == 2.5


class TestFuse:
    def test_single_embedding_is_identity(self):
        e = torch.randn(2, 256)
        assert torch.equal(fuse_embeddings([e]), e)

    def test_concatenation_order(self):
        a, b = torch.randn(1, 256), torch.randn(1, 256)
        fused = fuse_embeddings([a, b])
        assert fused.shape == (1, 512)
        assert torch.equal(fused[:, :256], a)
        assert torch.equal(fused[:, 256:], b)

    def test_swapping_permutes_halves(self):
        a, b = torch.randn(1, 4), torch.randn(1, 4)
        ab, ba = fuse_embeddings([a, b]), fuse_embeddings([b, a])
        assert torch.equal(ab[:, :4], ba[:, 4:])

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            fuse_embeddings([])


class TestClassify:
    def test_zero_head_gives_uniform(self):
        model = build_model(tiny_config(), seed=0)
        with torch.no_grad():
            model.classifier.weight.zero_()
            model.classifier.bias.zero_()
        probs = model.classify(torch.randn(3, 16))
        assert torch.allclose(probs, torch.full((3, 5), 0.2), atol=1e-7)

    def test_strong_first_logit(self):
        model = build_model(tiny_config(), seed=0)
        with torch.no_grad():
            model.classifier.weight.zero_()
            model.classifier.bias.copy_(torch.tensor([10.0, 0, 0, 0, 0]))
        probs = model.classify(torch.zeros(1, 16))[0]
        expected_p1 = math.exp(10) / (math.exp(10) + 4)
        assert probs.argmax().item() == int(FibrosisStage.F0)
        assert probs[0].item() > 0.99
        assert abs(probs[0].item() - expected_p1) < 1e-6

    def test_probabilities_normalized(self):
        torch.manual_seed(0)
        model = build_model(tiny_config(), seed=1)
        probs = model.classify(torch.randn(8, 16))
        assert torch.allclose(probs.sum(dim=1), torch.ones(8), atol=1e-6)
        assert (probs >= 0).all()

    def test_argmax_invariant_under_logit_shift(self):
        logits = torch.tensor([[1.0, 3.0, -2.0, 0.5, 2.9]])
        assert torch.softmax(logits, -1).argmax() == torch.softmax(logits + 100.0, -1).argmax()


# ---------------------------------------------------------------------------
# backbones and the assembled network
# ---------------------------------------------------------------------------


class LinearBackbone(nn.Module):
    """Bias-free single conv, for linearity checks."""

    feature_channels = 8
    stride = 2

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 8, 3, stride=2, padding=1, bias=False)

    def forward(self, x):
        return self.conv(x)


class TestBackbones:
    def test_tiny_shape_arithmetic(self):
        backbone = TinyBackbone()
        out = backbone(torch.randn(1, 3, 64, 64))
        assert out.shape == (1, 32, 8, 8)
        assert backbone.feature_channels == 32 and backbone.stride == 8

    def test_zero_input_through_linear_backbone(self):
        backbone = LinearBackbone()
        out = backbone(torch.zeros(1, 3, 16, 16))
        assert torch.equal(out, torch.zeros(1, 8, 8, 8))

    def test_unknown_backbone_rejected(self):
        with pytest.raises(ConfigurationError):
            build_backbone("vgg")


def _fake_tuple(modalities, patient="p", stage=FibrosisStage.F1):
    parts = tuple(
        (m, ImageSample(f"{patient}-{m.value}", patient, m, "x.png")) for m in modalities
    )
    return MultiModalSample(patient_id=patient, parts=parts, stage=stage)


class TestFusionNet:
    def test_shape_chain_tiny(self):
        config = tiny_config(modalities=("LSTE", "LUS"))
        model = build_model(config, seed=0)
        x = torch.randn(2, 3, 32, 32)
        stream = model.streams["LSTE"]
        features = stream.backbone(x)
        assert features.shape == (2, 32, 4, 4)
        reduced = stream.reducer(features)
        assert reduced.shape == (2, 16, 4, 4)
        attended = stream.attention(reduced)
        assert attended.shape == (2, 16, 4, 4)
        fused = model.embed([x, x])
        assert fused.shape == (2, 32)
        logits = model([x, x])
        assert logits.shape == (2, 5)

    def test_forward_deterministic_without_dropout(self):
        model = build_model(tiny_config(), seed=3)
        x = torch.randn(2, 3, 32, 32)
        assert torch.equal(model.predict_proba([x]), model.predict_proba([x]))

    def test_forward_matches_composed_ops(self):
        config = tiny_config(modalities=("LSTE", "LUS"))
        model = build_model(config, seed=4)
        model.eval()
        xa, xb = torch.randn(1, 3, 32, 32), torch.randn(1, 3, 32, 32)

        embeddings = []
        for modality, x in zip(config.modalities, (xa, xb)):
            stream = model.streams[modality.value]
            f = stream.backbone(x)
            r = stream.reducer(f)
            a = r * stream.attention.attention(r)  # gates broadcast over space
            embeddings.append(global_average_pool(a))
        fused = fuse_embeddings(embeddings)
        expected = torch.softmax(model.classifier(fused), dim=-1)

        actual = model.predict_proba([xa, xb])
        assert torch.allclose(actual, expected, atol=1e-6)

    def test_mono_modal_equivalence(self):
        bi = build_model(tiny_config(modalities=("LSTE",)), seed=9)
        x = torch.randn(1, 3, 32, 32)
        stream = bi.streams["LSTE"]
        reduced = stream.reducer(stream.backbone(x))
        attended = stream.attention(reduced)
        mono = torch.softmax(bi.classifier(global_average_pool(attended)), dim=-1)
        assert torch.allclose(bi.predict_proba([x]), mono, atol=1e-6)

    def test_wrong_part_count_rejected(self):
        model = build_model(tiny_config(modalities=("LSTE", "LUS")), seed=0)
        with pytest.raises(ConfigurationError):
            model([torch.randn(1, 3, 32, 32)])


class TestMonteCarloDropout:
    def test_zero_dropout_equals_deterministic_forward(self):
        model = build_model(tiny_config(dropout=0.0), seed=2)
        x = torch.randn(2, 3, 32, 32)
        for n_mc in (1, 3, 7):
            mc = model.predict_mc([x], n_mc=n_mc)
            assert torch.allclose(mc, model.predict_proba([x]), atol=1e-6)

    def test_single_pass_is_one_stochastic_forward(self):
        model = build_model(tiny_config(dropout=0.5), seed=2)
        x = torch.randn(1, 3, 32, 32)
        g1 = torch.Generator().manual_seed(10)
        g2 = torch.Generator().manual_seed(10)
        first = model.predict_mc([x], n_mc=1, generator=g1)
        fused = model.embed([x])
        manual = model.classify(fused, use_dropout=True, generator=g2)
        assert torch.allclose(first, manual, atol=1e-7)

    def test_mean_stays_on_simplex(self):
        model = build_model(tiny_config(dropout=0.5), seed=2)
        x = torch.randn(4, 3, 32, 32)
        mc = model.predict_mc([x], n_mc=9, generator=torch.Generator().manual_seed(0))
        assert torch.allclose(mc.sum(dim=1), torch.ones(4), atol=1e-6)

    def test_generator_makes_mc_reproducible(self):
        model = build_model(tiny_config(dropout=0.5), seed=2)
        x = torch.randn(1, 3, 32, 32)
        a = model.predict_mc([x], n_mc=5, generator=torch.Generator().manual_seed(77))
        b = model.predict_mc([x], n_mc=5, generator=torch.Generator().manual_seed(77))
        assert torch.equal(a, b)

    def test_rejects_nonpositive_n_mc(self):
        model = build_model(tiny_config(), seed=0)
        with pytest.raises(ValueError):
            model.predict_mc([torch.randn(1, 3, 32, 32)], n_mc=0)


def test_dropout_helper_scales_and_masks():
    g = torch.Generator().manual_seed(1)
    x = torch.ones(10000)
    out = dropout_with_generator(x, 0.5, g)
    kept = out[out > 0]
    assert torch.allclose(kept, torch.full_like(kept, 2.0))
    assert 0.4 < (out > 0).float().mean().item() < 0.6
    assert torch.equal(dropout_with_generator(x, 0.0), x)


class TestModelConfig:
    def test_rejects_indivisible_se_ratio(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(modalities=("LSTE",), reduced_channels=100, se_ratio=16)

    def test_rejects_bad_dropout(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(modalities=("LSTE",), dropout=1.0)

    def test_roundtrips_through_dict(self):
        config = tiny_config(modalities=("LSTE", "LSTQ"), dropout=0.3)
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = build_model(tiny_config(modalities=("LSTE", "LUS")), seed=11)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        assert restored.config == model.config
        for key, value in model.state_dict().items():
            assert torch.equal(restored.state_dict()[key], value)
