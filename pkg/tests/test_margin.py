import math

import numpy as np
import pytest

from turbfuse import tensor as T
from turbfuse.errors import ContractError
from turbfuse.margin import COS_CLAMP, ClassifierHead, MarginParams, angular_margin_loss, cosine_logits
from turbfuse.optim import finite_diff_check
from turbfuse.tensor import Tensor


def scalar_loss_oracle(features, weights, labels, m1, m2, m3, s):
    """Independent scalar recomputation of the margin loss contract."""
    losses = []
    for i, y in enumerate(labels):
        f = features[i] / math.sqrt(sum(v * v for v in features[i]))
        logits = []
        for j in range(weights.shape[0]):
            w = weights[j] / math.sqrt(sum(v * v for v in weights[j]))
            c = sum(a * b for a, b in zip(f, w))
            c = min(max(c, -1 + COS_CLAMP), 1 - COS_CLAMP)
            if j == y:
                theta = math.acos(c)
                if m1 * theta + m2 <= math.pi:
                    phi = math.cos(m1 * theta + m2)
                else:
                    phi = c - m2 * math.sin(m2)
                logits.append(s * (phi - m3))
            else:
                logits.append(s * c)
        mx = max(logits)
        lse = mx + math.log(sum(math.exp(z - mx) for z in logits))
        losses.append(lse - logits[y])
    return sum(losses) / len(losses)


def make_case(rng, b=4, c=6, d=8, dtype=np.float64):
    feats = Tensor(rng.standard_normal((b, d)), requires_grad=True, dtype=dtype)
    head = ClassifierHead.init(rng, c, d, dtype=dtype)
    head.weights.data[...] = rng.standard_normal((c, d))
    labels = rng.integers(0, c, b)
    return feats, head, labels


class TestReductions:
    def test_margin_free_equals_plain_cross_entropy(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            feats, head, labels = make_case(rng)
            p = MarginParams(1.0, 0.0, 0.0, 16.0)
            loss = angular_margin_loss(feats, labels, head, p).item()
            # independent plain scaled-softmax cross-entropy
            fn = feats.data / np.linalg.norm(feats.data, axis=1, keepdims=True)
            wn = head.weights.data / np.linalg.norm(head.weights.data, axis=1, keepdims=True)
            logits = 16.0 * np.clip(fn @ wn.T, -1 + COS_CLAMP, 1 - COS_CLAMP)
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            expect = -logp[np.arange(len(labels)), labels].mean()
            assert abs(loss - expect) < 1e-6

    def test_single_class_loss_zero(self):
        rng = np.random.default_rng(1)
        feats, head, _ = make_case(rng, b=3, c=1)
        loss = angular_margin_loss(feats, np.zeros(3, dtype=int), head, MarginParams()).item()
        assert loss == 0.0

    def test_cosface_form_logit(self):
        rng = np.random.default_rng(2)
        feats, head, labels = make_case(rng)
        p = MarginParams(1.0, 0.0, 0.35, 64.0)
        loss = angular_margin_loss(feats, labels, head, p).item()
        expect = scalar_loss_oracle(feats.data, head.weights.data, labels, 1.0, 0.0, 0.35, 64.0)
        assert abs(loss - expect) < 1e-9

    def test_aligned_feature_worked_example(self):
        # B=1, C=2, feature aligned with its class center, m2=0.5, s=64
        w = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        feats = Tensor(np.array([[2.0, 0.0, 0.0]]), dtype=np.float64)  # aligned with class 0
        head = ClassifierHead(Tensor(w, dtype=np.float64))
        p = MarginParams(1.0, 0.5, 0.0, 64.0)
        loss = angular_margin_loss(feats, np.array([0]), head, p).item()
        expect = scalar_loss_oracle(feats.data, w, [0], 1.0, 0.5, 0.0, 64.0)
        assert abs(loss - expect) < 1e-9
        # sanity anchor: target logit ~ 64*cos(0.5) up to the cosine clamp
        cos_y = 1.0 - COS_CLAMP
        target = 64.0 * math.cos(math.acos(cos_y) + 0.5)
        assert abs(target - 64.0 * math.cos(0.5)) < 2e-2


class TestRandomOracle:
    def test_full_loss_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            b = int(rng.integers(1, 5))
            c = int(rng.integers(2, 9))
            d = int(rng.integers(2, 17))
            feats, head, labels = make_case(rng, b=b, c=c, d=d)
            m1 = float(rng.choice([1.0, 1.0, 1.5]))
            m2 = float(rng.uniform(0, 0.6))
            m3 = float(rng.uniform(0, 0.4))
            s = float(rng.uniform(4, 64))
            p = MarginParams(m1, m2, m3, s)
            loss = angular_margin_loss(feats, labels, head, p).item()
            expect = scalar_loss_oracle(feats.data, head.weights.data, labels, m1, m2, m3, s)
            assert abs(loss - expect) < 1e-8


class TestInvariants:
    def test_scale_invariance_of_rows(self):
        rng = np.random.default_rng(4)
        feats, head, labels = make_case(rng)
        p = MarginParams()
        base = angular_margin_loss(feats, labels, head, p).item()
        feats2 = Tensor(feats.data * rng.uniform(0.1, 10, (4, 1)), dtype=np.float64)
        head2 = ClassifierHead(Tensor(head.weights.data * rng.uniform(0.1, 10, (6, 1)), dtype=np.float64))
        again = angular_margin_loss(feats2, labels, head2, p).item()
        assert abs(base - again) < 1e-9

    def test_loss_nondecreasing_in_m2(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            feats, head, labels = make_case(rng)
            losses = [
                angular_margin_loss(feats, labels, head, MarginParams(1.0, m2, 0.0, 16.0)).item()
                for m2 in (0.0, 0.2, 0.4, 0.6)
            ]
            # valid while theta_y + m2 <= pi; random cosines keep us inside
            assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            b = int(rng.integers(1, 5))
            c = int(rng.integers(2, 9))
            d = int(rng.integers(2, 17))
            feats, head, labels = make_case(rng, b=b, c=c, d=d)
            p = MarginParams(1.0, 0.4, 0.1, 12.0)

            def f(ps):
                return angular_margin_loss(feats, labels, head, p)

            err = finite_diff_check(f, [feats, head.weights], eps=1e-6, samples_per_tensor=10, seed=7)
            assert err < 1e-6


class TestContracts:
    def test_label_out_of_range(self):
        rng = np.random.default_rng(7)
        feats, head, _ = make_case(rng)
        with pytest.raises(ContractError):
            angular_margin_loss(feats, np.array([0, 1, 2, 6]), head, MarginParams())

    def test_zero_norm_feature_row(self):
        rng = np.random.default_rng(8)
        feats, head, labels = make_case(rng)
        feats.data[1, :] = 0.0
        with pytest.raises(ContractError):
            angular_margin_loss(feats, labels, head, MarginParams())

    def test_param_validation(self):
        with pytest.raises(ContractError):
            MarginParams(s=0.0)
        with pytest.raises(ContractError):
            MarginParams(m1=0.5)
        with pytest.raises(ContractError):
            MarginParams(m2=-0.1)

    def test_cosine_logits_clamped(self):
        rng = np.random.default_rng(9)
        feats, head, _ = make_case(rng)
        head.weights.data[0] = feats.data[0]  # cosine would be exactly 1
        cos = cosine_logits(feats, head)
        assert cos.data.max() <= 1 - COS_CLAMP and cos.data.min() >= -1 + COS_CLAMP
