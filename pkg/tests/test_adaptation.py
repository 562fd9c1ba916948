import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darec.adaptation import (DARecNet, DomainSamples, LossWeights, Sample, SampleBatch,
                              classifier_accuracy, darec_loss, forward, grl, grl_backward,
                              interleave, predict, pyramid_widths, train_darec, train_idarec,
                              train_udarec)
from darec.checks import adversarial_reference, random_batch
from darec.nncore import zero_grads
from darec.ratings import RatingMatrix


def zero_net(variant="U", k=3, ds=4, dt=5, mu=1.0):
    return DARecNet(k, ds, dt, variant=variant, mu=mu, extractor_width=6, std=0.0, seed=0)


def one_sample_batch(label, ds=4, dt=5, k=3, observed=None, value=0.0):
    b = SampleBatch(np.zeros((1, k)), np.array([float(label)]), np.zeros((1, ds)),
                    np.zeros((1, ds)), np.zeros((1, dt)), np.zeros((1, dt)))
    if observed is not None:
        v, m = (b.src_values, b.src_mask) if label == 0 else (b.tgt_values, b.tgt_mask)
        v[0, observed], m[0, observed] = value, 1.0
    return b


class TestGRL:
    def test_forward_identity(self):
        x = np.array([1.5, -2.0])
        assert grl(x, 0.7) is x

    def test_backward_hand_values(self):
        assert np.array_equal(grl_backward(np.array([2.0, 4.0]), 0.5), [-1.0, -2.0])

    def test_zero_mu(self):
        assert not np.any(grl_backward(np.array([2.0, -4.0]), 0.0))

    def test_negative_mu(self):
        with pytest.raises(ValueError):
            grl_backward(np.ones(2), -1.0)


class TestNetwork:
    def test_pyramid(self):
        # 100 * (10/100)^(1/3) = 46.4, ^(2/3) = 21.5
        assert pyramid_widths(100, 10) == [46, 22, 10]
        assert pyramid_widths(8, 8) == [8, 8, 8]

    def test_zero_network_outputs(self):
        out = forward(zero_net(), np.ones((2, 3)))
        assert np.array_equal(out.y_source, np.zeros((2, 4)))
        assert np.array_equal(out.y_target, np.zeros((2, 5)))
        assert np.array_equal(out.c_hat, [0.5, 0.5])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 1000), st.sampled_from(["U", "I"]))
    def test_shapes_and_probability_range(self, seed, variant):
        net = DARecNet(4, 7, 3, variant=variant, extractor_width=5, std=2.0, seed=seed)
        out = forward(net, np.random.default_rng(seed).normal(0, 5, (3, 4)))
        assert out.y_source.shape == (3, 7) and out.y_target.shape == (3, 3)
        assert np.all((out.c_hat > 0) & (out.c_hat < 1))

    def test_layer_counts(self):
        net = DARecNet(4, 30, 20, extractor_width=16, seed=0)
        assert len(net.head_source.layers) == 3 and len(net.classifier.layers) == 2
        assert net.head_source.widths == [16, 20, 24, 30]
        assert net.classifier.widths == [16, 8, 1]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(zero_net(k=3), np.ones(4))

    def test_shared_heads_count_parameters_once(self):
        net = DARecNet(4, 9, 9, variant="I", share_heads=True, extractor_width=6, seed=0)
        names = [p.name for p in net.params()]
        assert len(names) == len(set(names))
        assert net.head("target") is net.head("source")
        with pytest.raises(ValueError):
            DARecNet(4, 9, 8, variant="I", share_heads=True, seed=0)


class TestLoss:
    def test_perfect_reconstruction_saturated_classifier(self):
        net = zero_net("I", mu=0.0)
        net.classifier.layers[-1].b.value[...] = 1000.0
        b = one_sample_batch(1, observed=2, value=0.0)
        assert darec_loss(net, b, LossWeights(1.0, 0.0, 0.0)).total == 0.0

    def test_reversal_variant_reports_unweighted_bce(self):
        # mu sits in the reversal layer, so the classifier descends plain BCE
        net = zero_net("U", mu=2.0)
        parts = darec_loss(net, one_sample_batch(1), LossWeights(1.0, 2.0, 0.0))
        assert parts.classifier == pytest.approx(math.log(2), abs=1e-15)

    def test_single_residual(self):
        net = zero_net(mu=0.0)
        net.head_source.layers[-1].b.value[0] = 3.5
        parts = darec_loss(net, one_sample_batch(0, observed=0, value=4.0), LossWeights(1.0, 0.0, 0.0))
        assert parts.pred_source == 0.25 and parts.pred_target == 0.0

    def test_weighted_bce(self):
        # c = 1, c_hat = 0.5, mu = 2: 2 * ln 2
        net = zero_net("I", mu=2.0)
        parts = darec_loss(net, one_sample_batch(1), LossWeights(1.0, 2.0, 0.0))
        assert parts.classifier == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_beta_scales_target_term(self):
        net = zero_net()
        b = one_sample_batch(1, observed=1, value=2.0)
        assert darec_loss(net, b, LossWeights(0.25, 1.0, 0.0)).pred_target == 0.25 * 4.0

    def test_plain_masked_error_when_weights_vanish(self):
        rng = np.random.default_rng(0)
        net = DARecNet(3, 4, 5, mu=0.0, extractor_width=6, std=0.5, seed=1)
        b = random_batch(rng, 5, 3, 4, 5)
        out = forward(net, b.emb)
        ref = np.sum(((out.y_source - b.src_values) * b.src_mask) ** 2) + \
            np.sum(((out.y_target - b.tgt_values) * b.tgt_mask) ** 2)
        parts = darec_loss(net, b, LossWeights(1.0, 0.0, 0.0))
        assert parts.pred_source + parts.pred_target == pytest.approx(ref, rel=1e-13)

    def test_unmatched_head_gets_no_gradient(self):
        rng = np.random.default_rng(1)
        net = DARecNet(3, 4, 5, extractor_width=6, std=0.5, seed=2)
        b = random_batch(rng, 4, 3, 4, 5)
        b.label[:] = 0
        b.tgt_mask[:] = 0
        zero_grads(net.params())
        darec_loss(net, b, LossWeights(1.0, 1.0, 0.0), backward=True)
        assert all(not p.grad.any() for p in net.head_target.params())
        assert any(p.grad.any() for p in net.head_source.params())

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1e6, 1e6), st.sampled_from(["U", "I"]))
    def test_unobserved_values_do_not_matter(self, seed, junk, variant):
        rng = np.random.default_rng(seed)
        net = DARecNet(3, 4, 5, variant=variant, extractor_width=6, std=0.5, seed=seed)
        b = random_batch(rng, 4, 3, 4, 5)
        w = LossWeights(0.5, 1.5, 0.01)
        before = darec_loss(net, b, w).total
        b.src_values[b.src_mask == 0] = junk
        b.tgt_values[b.tgt_mask == 0] = junk
        assert darec_loss(net, b, w).total == before

    def test_grl_matches_two_player_reference(self):
        rng = np.random.default_rng(4)
        net = DARecNet(5, 6, 7, variant="U", mu=2.5, extractor_width=8, std=0.5, seed=rng)
        b = random_batch(rng, 6, 5, 6, 7)
        w = LossWeights(0.7, 2.5, 0.03)
        ref = adversarial_reference(net, b, w)
        zero_grads(net.params())
        darec_loss(net, b, w, backward=True)
        for p in net.params():
            np.testing.assert_allclose(p.grad, ref[p.name], rtol=0, atol=1e-12)


class TestInterleave:
    def test_equal_lengths(self):
        s = interleave(["s0", "s1"], ["t0", "t1"], 0)
        assert len(s) == 4 and sorted(s) == ["s0", "s1", "t0", "t1"]
        assert all(x[0] == "s" for x in s[::2]) and all(x[0] == "t" for x in s[1::2])

    def test_wrap_around(self):
        s = interleave(["s0"], ["t0", "t1", "t2"], 0)
        assert Counter(s) == {"s0": 3, "t0": 1, "t1": 1, "t2": 1}

    def test_deterministic(self):
        assert interleave(list(range(5)), list("abc"), 7) == interleave(list(range(5)), list("abc"), 7)

    def test_empty(self):
        with pytest.raises(ValueError):
            interleave([], [1], 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 99))
    def test_multiset_and_alternation(self, n_s, n_t, seed):
        src = [("s", j) for j in range(n_s)]
        tgt = [("t", j) for j in range(n_t)]
        s = interleave(src, tgt, seed)
        longer = src if n_s >= n_t else tgt
        shorter = tgt if n_s >= n_t else src
        c = Counter(s)
        assert all(c[x] == 1 for x in longer)
        ratio = len(longer) / len(shorter)
        assert all(math.floor(ratio) <= c[x] <= math.ceil(ratio) for x in shorter)
        assert all(a[0] != b[0] for a, b in zip(s, s[1:]))


def matrix(dense, observed):
    r, c = np.nonzero(observed)
    return RatingMatrix.from_entries(r, c, dense[r, c], [f"u{j}" for j in range(dense.shape[0])],
                                     [f"i{j}" for j in range(dense.shape[1])])


def separable_domains(n=40, k=4, d=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for label, shift in ((0, -2.0), (1, 2.0)):
        emb = rng.normal(0, 0.5, (n, k))
        emb[:, 0] += shift
        dense = rng.integers(1, 6, (n, d)).astype(float)
        out.append(DomainSamples(emb, label, matrix(dense, rng.random((n, d)) < 0.5)))
    return out


class TestTraining:
    def test_idarec_separates_domains(self):
        src, tgt = separable_domains()
        net = DARecNet(4, 6, 6, variant="I", mu=1.0, extractor_width=8, std=0.1, seed=0)
        train_idarec(net, src, tgt, LossWeights(1.0, 1.0, 1e-4), lr=0.01, batch_size=8,
                     epochs=40, seed=0)
        emb = np.vstack([src.embeddings, tgt.embeddings])
        labels = np.r_[np.zeros(len(src)), np.ones(len(tgt))]
        assert classifier_accuracy(net, emb, labels) > 0.9

    def test_same_seed_identical(self):
        src, tgt = separable_domains(n=10)
        nets = []
        for _ in range(2):
            net = DARecNet(4, 6, 6, variant="U", extractor_width=6, seed=3)
            train_udarec(net, src, tgt, LossWeights(), lr=0.01, batch_size=4, epochs=3, seed=5)
            nets.append(net)
        for a, b in zip(nets[0].params(), nets[1].params()):
            assert a.value.tobytes() == b.value.tobytes()

    def test_mu_zero_decouples_extractor(self):
        # with mu = 0 the extractor and heads follow the predictor loss alone,
        # whatever the classifier is doing
        src, tgt = separable_domains(n=12)
        runs = []
        for cls_bias in (0.0, 3.0):
            net = DARecNet(4, 6, 6, variant="U", mu=0.0, extractor_width=6, std=0.1, seed=1)
            net.classifier.layers[-1].b.value[...] = cls_bias
            train_udarec(net, src, tgt, LossWeights(1.0, 0.0, 0.0), lr=0.01, batch_size=4,
                         epochs=3, seed=2)
            runs.append(net)
        for a, b in zip(runs[0].extractor.params() + runs[0].head_source.params(),
                        runs[1].extractor.params() + runs[1].head_source.params()):
            assert np.array_equal(a.value, b.value)

    def test_overfit_prediction(self):
        rng = np.random.default_rng(0)
        emb = rng.random((6, 3))
        dense = rng.integers(1, 6, (6, 4)).astype(float)
        src = DomainSamples(emb, 0, matrix(dense, np.ones_like(dense, bool)))
        tgt = DomainSamples(emb + 5.0, 1, matrix(dense, np.ones_like(dense, bool)))
        net = DARecNet(3, 4, 4, variant="I", mu=0.0, extractor_width=16, std=0.5, seed=0)
        train_idarec(net, src, tgt, LossWeights(1.0, 0.0, 0.0), lr=0.03, batch_size=12,
                     epochs=1500, seed=0)
        assert np.max(np.abs(predict(net, emb, "source") - dense)) < 0.1

    def test_variant_checks(self):
        src, tgt = separable_domains(n=4)
        with pytest.raises(ValueError):
            train_udarec(DARecNet(4, 6, 6, variant="I", seed=0), src, tgt, LossWeights())
        with pytest.raises(ValueError):
            train_idarec(DARecNet(4, 6, 6, variant="U", seed=0), src, tgt, LossWeights())
        with pytest.raises(ValueError, match="mu"):
            train_darec(DARecNet(4, 6, 6, mu=2.0, seed=0), src, tgt, LossWeights(mu=1.0))


class TestPredict:
    def test_clipping(self):
        net = zero_net()
        net.head_source.layers[-1].b.value[:2] = [7.2, 3.4]
        y = predict(net, np.zeros(3), "source")
        assert y[0] == 5.0 and y[1] == 3.4 and y[2] == 1.0

    def test_unknown_domain(self):
        with pytest.raises(ValueError):
            predict(zero_net(), np.zeros(3), "other")

    def test_accuracy_ties_and_flips(self):
        net = zero_net()
        emb = np.zeros((4, 3))
        labels = np.array([0, 0, 0, 1])
        assert classifier_accuracy(net, emb, labels) == 0.75
        assert classifier_accuracy(net, emb, 1 - labels) == 0.25
        with pytest.raises(ValueError):
            classifier_accuracy(net, emb[:0], labels[:0])


def test_sample_stack_places_cross_ratings():
    s = Sample(np.zeros(2), np.array([1.0, 0]), np.array([1.0, 0]), 0, 0,
               np.array([0, 4.0, 0]), np.array([0, 1.0, 0]))
    b = SampleBatch.stack([s], 2, 3)
    assert b.src_mask.tolist() == [[1, 0]] and b.tgt_values.tolist() == [[0, 4, 0]]
