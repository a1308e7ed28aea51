import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradw import autodiff as ad
from gradw.autodiff import Tape, Tensor, backward_to
from gradw.enhance import enhance
from gradw.loss import (VARIANT_NAMES, VARIANTS, DistanceMap, GradientMap, WeightMap, activation_and_gradient,
                        artifact_distance, compose_loss, enhancement_loss, get_variant, gradient_map, weight_map)

from helpers import central_diff, rel_err

finite = st.floats(-5, 5, allow_nan=False)


def grid(c=3, t=4, f=2):
    return arrays(np.float64, (c, t, f), elements=finite)


class TestGradientMap:
    def test_mean_pool_affine_closed_form(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((5, 3))
        a0 = rng.standard_normal((3, 4, 2))
        with Tape() as tape:
            a = tape.tap(Tensor(a0, dtype=np.float64, requires_grad=True) * 1.0)
            logits = ad.affine(ad.mean_over(a, (1, 2)), Tensor(w, dtype=np.float64))
            g = backward_to(logits[2], taps=[a]).taps[a]
        np.testing.assert_allclose(g, np.broadcast_to(w[2][:, None, None] / 8, g.shape), rtol=1e-14)

    def test_matches_finite_differences_on_activation(self, tiny_speaker, feature_pair):
        with ad.precision(np.float64):
            from gradw.speaker import SpeakerNet
            net = SpeakerNet(tiny_speaker.config, seed=1).freeze()
            x = feature_pair[0][:1, None]
            g = gradient_map(net, x[0, 0], 2).values
            a0 = net(Tensor(x)).activation.data[0]

            def head(a):
                pooled = ad.mean_and_std(Tensor(a[None]), axes=(2, 3))
                return float(net.classifier(net.embed_layer(pooled)).data[0, 2])

            assert rel_err(g, central_diff(head, a0)) < 1e-6

    def test_repeatable_and_model_untouched(self, tiny_speaker, feature_pair):
        before = {k: v.copy() for k, v in tiny_speaker.state().items()}
        g1 = gradient_map(tiny_speaker, feature_pair[0][0], 1)
        g2 = gradient_map(tiny_speaker, feature_pair[0][0], 1)
        assert np.array_equal(g1.values, g2.values)
        assert g1.values.shape == tiny_speaker(Tensor(feature_pair[0][:1, None])).activation.shape[1:]
        assert all(np.array_equal(before[k], v) for k, v in tiny_speaker.state().items())

    def test_invalid_target(self, tiny_speaker, feature_pair):
        with pytest.raises(IndexError):
            gradient_map(tiny_speaker, feature_pair[0][0], 4)

    def test_batch_items_independent(self, tiny_speaker, feature_pair):
        clean = feature_pair[0]
        gb = gradient_map(tiny_speaker, clean, [1, 3]).values
        g0 = gradient_map(tiny_speaker, clean[0], 1).values
        np.testing.assert_allclose(gb[0], g0, rtol=1e-5, atol=1e-7)


class TestDistance:
    def test_zero_when_equal(self):
        g = np.random.default_rng(1).standard_normal((3, 4, 2))
        for mode in ("artifact", "residual", "both", "channel"):
            assert np.all(artifact_distance(g, g, mode).values == 0)

    def test_single_channel_example(self):
        enh, ref = np.array([[[1.0, -1.0]]]), np.zeros((1, 1, 2))
        assert artifact_distance(enh, ref).values.tolist() == [[1, -1]]
        assert artifact_distance(enh, ref, "residual").values.tolist() == [[-1, 1]]
        assert artifact_distance(enh, ref, "both").values.tolist() == [[1, 1]]

    def test_channel_domain(self):
        enh = np.arange(24.0).reshape(3, 4, 2)
        d = artifact_distance(enh, np.zeros_like(enh), "channel")
        assert d.domain == "channel"
        np.testing.assert_array_equal(d.values, enh.sum(axis=(1, 2)))

    def test_clean_mode_uses_reference_only(self):
        rng = np.random.default_rng(2)
        e, r = rng.standard_normal((2, 3, 4, 2))
        np.testing.assert_array_equal(artifact_distance(e, r, "clean").values, r.sum(axis=0))

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            artifact_distance(np.zeros((2, 3, 3)), np.zeros((2, 3, 2)))

    @settings(max_examples=100, deadline=None)
    @given(grid(), grid())
    def test_antisymmetry_and_triangle(self, e, r):
        art = artifact_distance(e, r).values
        res = artifact_distance(e, r, "residual").values
        both = artifact_distance(e, r, "both").values
        assert np.array_equal(art, -res)
        assert np.all(both >= np.abs(art) - 1e-12)


class TestWeightMap:
    def test_uniform(self):
        p = weight_map(np.full((4, 3), 0.7)).values
        assert np.all(p == 1 / 12)

    def test_log3(self):
        d = DistanceMap(np.array([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(weight_map(d).values, [[0.25, 0.75]], rtol=1e-6)
        np.testing.assert_allclose(weight_map(d, "softmax_plus_one").values, [[1.25, 1.75]], rtol=1e-6)

    def test_minmax(self):
        np.testing.assert_allclose(weight_map(np.array([[2.0, 4.0, 6.0]]), "minmax").values, [[0, 0.5, 1]])

    def test_minmax_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            weight_map(np.ones((2, 2)), "minmax")

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            weight_map(np.ones((2, 2)), "sparsemax")

    def test_channel_domain_normalizes_last_axis(self):
        p = weight_map(DistanceMap(np.random.default_rng(3).standard_normal((2, 5)), "channel")).values
        np.testing.assert_allclose(p.sum(axis=-1), 1, atol=1e-6)

    def test_result_is_detached(self):
        with Tape():
            d = Tensor(np.random.default_rng(4).standard_normal((3, 2)), requires_grad=True)
            w = weight_map(ad.mul(d, 2.0))
        assert isinstance(w.values, np.ndarray)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 4)), elements=st.floats(-30, 30)))
    def test_sums(self, d):
        p = weight_map(d).values
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-6
        q = weight_map(d, "softmax_plus_one").values
        if d.size > 1:
            assert np.all(q > 1) and np.all(q < 2)
        assert abs(q.sum() - (d.size + 1)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (5, 3), elements=st.floats(-10, 10), unique=True))
    def test_minmax_range(self, d):
        p = weight_map(d, "minmax").values
        assert p.min() == 0 and p.max() == pytest.approx(1)


class TestEnhancementLoss:
    def test_hand_example(self):
        p = WeightMap(np.array([[0.75, 0.25]]))
        loss = enhancement_loss(np.array([[[1.0, 2.0]]]), np.array([[[0.0, 4.0]]]), p, "grad_w")
        assert loss.item() == pytest.approx(1.25)

    def test_equal_is_zero_for_every_variant(self):
        a = np.random.default_rng(5).random((3, 4, 2))
        for v in VARIANT_NAMES:
            dom = get_variant(v).domain
            p = None if dom is None else WeightMap(np.full((3,) if dom == "channel" else (4, 2), 0.1), domain=dom)
            assert enhancement_loss(a, a, p, v).item() == 0

    @settings(max_examples=100, deadline=None)
    @given(grid(), grid())
    def test_uniform_reduction(self, a, b):
        with ad.precision(np.float64):
            eq = enhancement_loss(a, b, None, "equal_w").item()
            gw = enhancement_loss(a, b, weight_map(np.zeros((4, 2))), "grad_w").item()
        assert gw == pytest.approx(eq / 8, rel=1e-6, abs=1e-12)

    def test_domain_mismatch(self):
        a = np.zeros((3, 4, 2))
        with pytest.raises(ValueError, match="channel"):
            enhancement_loss(a, a, WeightMap(np.ones((4, 2)) / 8), "channel")
        with pytest.raises(ad.ShapeError):
            enhancement_loss(a, a, WeightMap(np.ones((4, 3)) / 12), "grad_w")
        with pytest.raises(ValueError, match="weight map"):
            enhancement_loss(a, a, None, "grad_w")

    def test_gradient_only_to_enhanced(self):
        with Tape():
            r = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
            e = Tensor(np.zeros((1, 2, 2, 2)), requires_grad=True)
            g = backward_to(enhancement_loss(r, e, None, "equal_w"), params=[r, e])
        assert r in g.disconnected
        assert np.all(g.params[e] == -1)


class TestVariants:
    def test_registry(self):
        assert set(VARIANT_NAMES) == {"grad_w", "equal_w", "clean_w", "res_w", "no_softmax", "channel",
                                      "residual", "both"}
        assert VARIANTS["res_w"].scheme == "softmax_plus_one"
        assert VARIANTS["no_softmax"].scheme == "minmax"

    def test_unknown_lists_names(self):
        with pytest.raises(ValueError) as exc:
            get_variant("grad-w")
        assert all(n in str(exc.value) for n in VARIANT_NAMES)

    def test_all_variants_distinct_on_generic_instance(self, tiny_speaker, tiny_unet, feature_pair):
        clean, noisy, tgt = feature_pair
        values = {}
        for v in VARIANT_NAMES:
            with Tape():
                x = Tensor(noisy[:, None])
                values[v] = compose_loss(tiny_speaker, clean[:, None], enhance(x, tiny_unet(x)), tgt, v).item()
        vals = list(values.values())
        assert all(np.isfinite(vals))
        assert len({round(x, 9) for x in vals}) == len(vals), values


class TestComposeLoss:
    def test_equal_w_skips_gradient_pass(self, tiny_speaker, feature_pair, monkeypatch):
        import gradw.loss as L

        def boom(*a, **k):
            raise AssertionError("gradient pass ran")

        monkeypatch.setattr(L, "activation_and_gradient", boom)
        clean, noisy, tgt = feature_pair
        with Tape():
            loss = compose_loss(tiny_speaker, clean[:, None], Tensor(noisy[:, None]), tgt, "equal_w")
        a_r = tiny_speaker(Tensor(clean[:, None])).activation.data
        a_e = tiny_speaker(Tensor(noisy[:, None])).activation.data
        assert loss.item() == pytest.approx(np.abs(a_r - a_e).sum() / 2, rel=1e-5)

    def test_backward_reaches_unet_only(self, tiny_speaker, tiny_unet, feature_pair):
        clean, noisy, tgt = feature_pair
        before = {k: v.copy() for k, v in tiny_speaker.state().items()}
        with Tape():
            x = Tensor(noisy[:, None])
            loss = compose_loss(tiny_speaker, clean[:, None], enhance(x, tiny_unet(x)), tgt, "grad_w")
            g = backward_to(loss, params=tiny_unet.params())
            gs = backward_to(loss, params=tiny_speaker.params())
        assert gs.params == {}
        assert sum(np.abs(v).sum() for v in g.params.values()) > 0
        assert all(np.array_equal(before[k], v) for k, v in tiny_speaker.state().items())

    def test_return_parts(self, tiny_speaker, feature_pair):
        clean, noisy, tgt = feature_pair
        with Tape():
            _, parts = compose_loss(tiny_speaker, clean[:, None], Tensor(noisy[:, None]), tgt, "grad_w",
                                    return_parts=True)
        assert parts["p"].values.shape == parts["d"].values.shape == (2, 3, 2)
        np.testing.assert_allclose(parts["p"].values.sum(axis=(1, 2)), 1, atol=1e-6)

    def test_identical_inputs_give_zero_distance(self, tiny_speaker, feature_pair):
        clean, _, tgt = feature_pair
        with Tape():
            loss, parts = compose_loss(tiny_speaker, clean[:, None], Tensor(clean[:, None]), tgt, "grad_w",
                                       return_parts=True)
        assert np.all(parts["d"].values == 0)
        assert loss.item() == 0

    def test_training_mode_rejected(self, feature_pair):
        from conftest import TINY_SPK
        from gradw.speaker import SpeakerNet
        clean, noisy, tgt = feature_pair
        with pytest.raises(RuntimeError):
            compose_loss(SpeakerNet(TINY_SPK), clean, noisy, tgt)
