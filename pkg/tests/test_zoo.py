import numpy as np
import pytest

from rtsr import zoo
from rtsr.resample import nearest_upsample
from rtsr.tensor import ActivationKind, ConvParams, activation_apply, conv2d, elementwise, pixel_shuffle
from rtsr.zoo import (
    MANDATORY_MODELS,
    AnchorAddL,
    BuildError,
    ConvL,
    GlobalResidualL,
    ModelSpec,
    RELU,
    ShuffleL,
    SpabL,
    anchor_residual,
    build,
    forward,
    forward_padded,
    get_spec,
    spab_forward,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
    verify_deploy_equivalence,
    zoo_catalog,
)


def rand_img(rng, side=12, n=1):
    return rng.random((n, 3, side, side)).astype(np.float32)


class TestBuild:
    def test_reptcn_deploy_has_three_conv_layers(self):
        g = build(get_spec("reptcn"), "deploy", seed=0)
        convs = [n for n in g.nodes if isinstance(n, zoo.ConvNode)]
        assert len(convs) == 3
        assert not any(isinstance(n, zoo.RepNode) for n in g.nodes)

    def test_lanczospp_net_gain_is_4x(self):
        spec = get_spec("lanczospp")
        validate_spec(spec)
        g = build(spec, "train", seed=1)
        x = rand_img(np.random.default_rng(0), side=12)
        assert forward(g, x).shape == (1, 3, 48, 48)

    def test_mismatched_final_channels_rejected(self):
        bad = ModelSpec(name="bad", channels=8, layers=(ConvL(8), RELU, ConvL(47), ShuffleL(4)))
        with pytest.raises(BuildError, match="not divisible"):
            validate_spec(bad)
        bad2 = ModelSpec(name="bad2", channels=8, layers=(ConvL(8), RELU, ConvL(8), ShuffleL(2)))
        with pytest.raises(BuildError):
            validate_spec(bad2)

    def test_error_names_layer_index(self):
        bad = ModelSpec(name="bad", channels=8, layers=(ConvL(8), ShuffleL(3), ConvL(48), ShuffleL(4)))
        with pytest.raises(BuildError, match="layer 1"):
            validate_spec(bad)

    def test_output_shape_at_r4(self):
        g = build(get_spec("c3"), "deploy", seed=2)
        x = rand_img(np.random.default_rng(1), side=64)
        assert forward(g, x).shape == (1, 3, 256, 256)


class TestForward:
    def test_zeroed_final_conv_with_global_residual_is_nearest(self):
        spec = ModelSpec(
            name="anchored",
            channels=8,
            layers=(ConvL(8), RELU, ConvL(48), ShuffleL(4), GlobalResidualL()),
        )
        g = build(spec, "train", seed=3)
        g.nodes[2].params.weight[:] = 0.0
        g.nodes[2].params.bias[:] = 0.0
        x = rand_img(np.random.default_rng(2), side=6)
        np.testing.assert_allclose(forward(g, x), nearest_upsample(x, 4), atol=1e-6)

    @pytest.mark.parametrize("name", MANDATORY_MODELS)
    def test_train_deploy_equivalence(self, name):
        g = build(get_spec(name), "train", seed=4)
        rep = verify_deploy_equivalence(g, trials=10, tol=1e-4)
        assert rep.passed, f"{name}: max abs err {rep.max_abs_err}"

    def test_batch_equivariance(self):
        g = build(get_spec("span"), "train", seed=5)
        rng = np.random.default_rng(3)
        batch = rand_img(rng, side=8, n=3)
        whole = forward(g, batch)
        parts = np.concatenate([forward(g, batch[i : i + 1]) for i in range(3)], axis=0)
        np.testing.assert_allclose(whole, parts, atol=1e-6)

    def test_incompatible_dims_rejected(self):
        g = build(get_spec("lanczospp"), "train", seed=6)
        with pytest.raises(ValueError, match="divisible"):
            forward(g, rand_img(np.random.default_rng(4), side=10))

    def test_forward_padded_handles_any_size(self):
        g = build(get_spec("lanczospp"), "deploy", seed=7)
        x = rand_img(np.random.default_rng(5), side=10)
        sr = forward_padded(g, x)
        assert sr.shape == (1, 3, 40, 40)
        # border context should not change interior values much vs aligned input
        x12 = rand_img(np.random.default_rng(5), side=12)
        np.testing.assert_allclose(
            forward_padded(g, x12), forward(g, x12), atol=1e-6
        )


class TestSpab:
    def _weights(self, rng, c):
        def conv():
            w = (rng.standard_normal((c, c, 3, 3)) * 0.2).astype(np.float32)
            return ConvParams(weight=w, bias=np.zeros(c, np.float32), padding=1)

        return conv(), conv(), conv()

    def test_zero_weights_give_zero_output(self):
        c = 4
        zero = ConvParams(weight=np.zeros((c, c, 3, 3), np.float32), bias=np.zeros(c, np.float32), padding=1)
        x = np.random.default_rng(6).random((1, c, 5, 5)).astype(np.float32)
        out = spab_forward(x, (zero, zero, zero))
        np.testing.assert_allclose(out, 0.0, atol=1e-7)

    def test_zero_input_zero_bias_gives_zero(self):
        rng = np.random.default_rng(7)
        weights = self._weights(rng, 4)
        out = spab_forward(np.zeros((1, 4, 5, 5), np.float32), weights)
        np.testing.assert_allclose(out, 0.0, atol=1e-7)

    def test_matches_primitive_composition(self):
        rng = np.random.default_rng(8)
        w1, w2, w3 = self._weights(rng, 5)
        o = rng.random((1, 5, 6, 6)).astype(np.float32)
        relu = ActivationKind.RELU
        h = conv2d(activation_apply(conv2d(activation_apply(conv2d(o, w1), relu), w2), relu), w3)
        u = elementwise(o, h, "add")
        v = activation_apply(h, ActivationKind.SIGMOID_CENTERED)
        want = elementwise(u, v, "mul")
        got = spab_forward(o, (w1, w2, w3))
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_channel_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        w = ConvParams(weight=rng.standard_normal((4, 5, 3, 3)).astype(np.float32), padding=1)
        with pytest.raises(ValueError, match="preserve"):
            spab_forward(np.zeros((1, 5, 6, 6), np.float32), (w, w, w))


class TestAnchor:
    def test_channel_major_repeat(self):
        x = np.array([0.1, 0.5, 0.9], np.float32).reshape(1, 3, 1, 1)
        a = anchor_residual(x, 4)
        assert a.shape == (1, 48, 1, 1)
        np.testing.assert_allclose(a[0, :16, 0, 0], 0.1)
        np.testing.assert_allclose(a[0, 16:32, 0, 0], 0.5)
        np.testing.assert_allclose(a[0, 32:, 0, 0], 0.9)

    def test_shuffle_of_anchor_is_nearest_upsample(self):
        rng = np.random.default_rng(10)
        x = rand_img(rng, side=5)
        np.testing.assert_array_equal(pixel_shuffle(anchor_residual(x, 4), 4), nearest_upsample(x, 4))

    def test_r1_identity(self):
        x = rand_img(np.random.default_rng(11), side=3)
        np.testing.assert_array_equal(anchor_residual(x, 1), x)

    def test_non_rgb_rejected(self):
        with pytest.raises(ValueError, match="3-channel"):
            anchor_residual(np.zeros((1, 4, 2, 2), np.float32), 4)


class TestCatalog:
    def test_contains_all_mandatory_entries(self):
        names = [s.name for s in zoo_catalog()]
        assert len(names) >= 7
        for name in MANDATORY_MODELS:
            assert name in names

    def test_every_entry_is_deterministic_and_buildable(self):
        a = [spec_to_dict(s) for s in zoo_catalog()]
        b = [spec_to_dict(s) for s in zoo_catalog()]
        assert a == b
        for spec in zoo_catalog():
            build(spec, "train", seed=0)

    def test_parameter_budgets(self):
        for spec in zoo_catalog():
            deploy = build(spec, "deploy", seed=0)
            m = deploy.param_count() / 1e6
            assert m <= 0.08, f"{spec.name}: {m:.4f} M exceeds the budget"
            if spec.name == "reptcn":
                assert 0.008 <= m <= 0.012, f"reptcn weight count {m:.4f} M outside bracket"

    def test_every_catalog_entry_passes_fusion_equivalence(self):
        for spec in zoo_catalog():
            g = build(spec, "train", seed=1)
            rep = verify_deploy_equivalence(g, trials=3, tol=1e-4)
            assert rep.passed, spec.name

    def test_unknown_name_rejected(self):
        with pytest.raises(KeyError, match="unknown model"):
            get_spec("does_not_exist")


class TestSerialization:
    @pytest.mark.parametrize("name", list(MANDATORY_MODELS) + ["etds", "urpnet", "pixelart"])
    def test_spec_dict_round_trip(self, name):
        spec = get_spec(name)
        again = spec_from_dict(spec_to_dict(spec))
        assert again == spec

    def test_aux_and_anchor_round_trip(self):
        spec = ModelSpec(
            name="t",
            channels=8,
            aux_head=True,
            layers=(ConvL(8), RELU, SpabL(), ConvL(48), AnchorAddL(4), ShuffleL(4)),
        )
        again = spec_from_dict(spec_to_dict(spec))
        assert again == spec


def test_strip_model_bias_covers_every_conv():
    g = build(get_spec("anunet"), "train", seed=8)
    assert not zoo.model_biases_absent(g)
    zoo.strip_model_bias(g)
    assert zoo.model_biases_absent(g)
    # still runs and fuses
    rep = verify_deploy_equivalence(g, trials=2, tol=1e-4)
    assert rep.passed
