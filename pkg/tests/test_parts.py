"""Part probabilities, weighted aggregation, and the part head."""

import numpy as np
import pytest

from oracles import gradcheck
from tristream import tensor as T
from tristream.errors import ShapeError
from tristream.heads import gap
from tristream.parts import PartHead, part_aggregate, part_probabilities
from tristream.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


class TestPartProbabilities:
    def test_zero_weights_uniform(self):
        f = rng(1).normal(size=(4, 3, 6))
        probs = part_probabilities(Tensor(f), Tensor(np.zeros((5, 6)))).data
        np.testing.assert_allclose(probs, 1.0 / 5.0)

    def test_two_part_closed_form(self):
        w = np.zeros((2, 4))
        w[0, 0] = 1.0
        f = np.zeros((1, 1, 4))
        f[0, 0, 0] = 1.0  # logits (1, 0) -> (e/(e+1), 1/(e+1))
        probs = part_probabilities(Tensor(f), Tensor(w)).data[0, 0]
        e = np.exp(1.0)
        np.testing.assert_allclose(probs, [e / (e + 1), 1 / (e + 1)], atol=1e-12)

    def test_pixel_sums_one(self):
        f = rng(2).normal(size=(6, 4, 8))
        w = rng(3).normal(size=(7, 8))
        probs = part_probabilities(Tensor(f), Tensor(w)).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            part_probabilities(Tensor(np.zeros((2, 2, 5))), Tensor(np.zeros((3, 4))))


class TestPartAggregate:
    def test_indicator_weighting(self):
        f = rng(4).uniform(size=(4, 3, 5))
        k = 4
        probs = np.zeros((4, 3, k))
        probs[:, :, 2] = 1.0  # all mass on part 2
        f_parts, _ = part_aggregate(Tensor(f), Tensor(probs))
        np.testing.assert_allclose(f_parts.data[1], gap(Tensor(f)).data, atol=1e-12)
        assert np.all(f_parts.data[0] == 0.0) and np.all(f_parts.data[2] == 0.0)

    def test_uniform_weighting(self):
        f = rng(5).uniform(size=(5, 2, 3))
        k = 3
        probs = np.full((5, 2, k), 1.0 / k)
        f_parts, f_l = part_aggregate(Tensor(f), Tensor(probs))
        for p in range(k - 1):
            np.testing.assert_allclose(f_parts.data[p], gap(Tensor(f)).data / k, atol=1e-12)
        assert f_l.shape == ((k - 1) * 3,)

    def test_matches_triple_loop_oracle(self):
        h, w, cd, k = 4, 3, 5, 4
        f = rng(6).normal(size=(h, w, cd))
        probs = rng(7).uniform(size=(h, w, k))
        probs /= probs.sum(-1, keepdims=True)
        f_parts, f_l = part_aggregate(Tensor(f), Tensor(probs))
        want = np.zeros((k - 1, cd))
        for part in range(1, k):
            for c in range(cd):
                acc = 0.0
                for i in range(h):
                    for j in range(w):
                        acc += probs[i, j, part] * f[i, j, c]
                want[part - 1, c] = acc / (h * w)
        np.testing.assert_allclose(f_parts.data, want, atol=1e-10)
        np.testing.assert_allclose(f_l.data, want.reshape(-1), atol=1e-10)

    def test_linear_in_features(self):
        probs = rng(8).uniform(size=(3, 3, 4))
        probs /= probs.sum(-1, keepdims=True)
        x = rng(9).normal(size=(3, 3, 5))
        y = rng(10).normal(size=(3, 3, 5))
        a, b = 0.7, -1.9
        lhs = part_aggregate(Tensor(a * x + b * y), Tensor(probs))[1].data
        rhs = a * part_aggregate(Tensor(x), Tensor(probs))[1].data + b * part_aggregate(Tensor(y), Tensor(probs))[1].data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_part_permutation_permutes_blocks(self):
        f = rng(11).uniform(size=(4, 2, 3))
        probs = rng(12).uniform(size=(4, 2, 5))
        probs /= probs.sum(-1, keepdims=True)
        _, f_l = part_aggregate(Tensor(f), Tensor(probs))
        perm = [0, 3, 1, 2, 4]  # permute non-background channels 1..4
        _, f_l_perm = part_aggregate(Tensor(f), Tensor(probs[:, :, perm]))
        blocks = f_l.data.reshape(4, 3)
        blocks_perm = f_l_perm.data.reshape(4, 3)
        np.testing.assert_allclose(blocks_perm, blocks[[2, 0, 1, 3]], atol=1e-12)


class TestPartHead:
    def test_zero_input_zero_bias_zero_logits(self):
        head = PartHead(num_parts=4, dense_channels=3, num_classes=3, rng=rng(13))
        head.part_weights.data = np.zeros_like(head.part_weights.data)
        probs, f_l, t_l, p_l = head(Tensor(np.zeros((2, 4, 4, 3))), training=False)
        assert np.all(p_l.data == 0.0)
        np.testing.assert_allclose(probs.data, 0.25)

    def test_hand_set_affine(self):
        head = PartHead(num_parts=2, dense_channels=2, num_classes=2, rng=rng(14))
        head.fc.weight.data = np.array([[1.0, 2.0], [3.0, -1.0]])
        head.fc.bias.data = np.array([0.5, -0.5])
        f = rng(15).uniform(size=(1, 4, 4, 2))
        _, _, t_l, p_l = head(Tensor(f), training=False)
        want = t_l.data @ head.fc.weight.data + head.fc.bias.data
        np.testing.assert_allclose(p_l.data, want, atol=1e-12)

    def test_eval_determinism(self):
        head = PartHead(num_parts=5, dense_channels=4, num_classes=3, rng=rng(16))
        f = Tensor(rng(17).uniform(size=(2, 4, 4, 4)))
        a = head(f, training=False)[3].data
        b = head(f, training=False)[3].data
        assert np.array_equal(a, b)

    def test_gradient_wrt_part_weights(self):
        """Full part stream gradient (probabilities -> aggregate) vs finite differences."""

        def build(t):
            probs = part_probabilities(t["f"], t["w"])
            _, f_l = part_aggregate(t["f"], probs)
            return T.tsum(T.mul(f_l, f_l))

        for trial in range(5):
            r = rng(trial + 30)
            gradcheck(build, {"f": r.normal(size=(4, 3, 5)), "w": r.normal(size=(4, 5))})
