import math

import numpy as np
import pytest

from echonav import autodiff as ad
from echonav.autodiff import Tape, Tensor
from echonav.policy import (PolicyNetwork, act, adversary_weight, decode_angle)


@pytest.fixture
def tiny_net():
    return PolicyNetwork(num_heard=4, freq_bins=4, time_frames=4, ray_count=5,
                         init_seed=99)


def random_inputs(rng, batch, net):
    depth = rng.uniform(0, 10, size=(batch, net.ray_count)).astype(np.float32)
    audio = rng.uniform(0, 1, size=(batch, net.audio_dim)).astype(np.float32)
    prev = np.zeros((batch, 4), dtype=np.float32)
    prev[np.arange(batch), rng.integers(0, 4, size=batch)] = 1.0
    return depth, audio, prev


class TestAdversarySchedule:
    def test_starts_at_zero(self):
        assert adversary_weight(0, 1000, 1.0) == 0.0
        assert adversary_weight(0, 7, 3.5) == 0.0

    def test_midpoint_value(self):
        assert adversary_weight(500, 1000, 1.0) == pytest.approx(0.986614, abs=1e-6)

    def test_endpoint_value(self):
        assert adversary_weight(1000, 1000, 1.0) == pytest.approx(0.9999092, abs=1e-6)

    def test_monotone_and_bounded(self):
        values = [adversary_weight(n, 200, 0.7) for n in range(201)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert all(0.0 <= v < 0.7 for v in values)

    def test_scales_with_bound(self):
        assert adversary_weight(50, 100, 2.0) == pytest.approx(
            2.0 * adversary_weight(50, 100, 1.0))

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            adversary_weight(0, 0, 1.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            adversary_weight(5, 4, 1.0)


class TestDecodeAngle:
    def test_cardinal_points(self):
        assert decode_angle(0.0, 1.0) == pytest.approx(0.0)
        assert decode_angle(1.0, 0.0) == pytest.approx(math.pi / 2)

    def test_known_pair(self):
        assert decode_angle(0.6, 0.8) == pytest.approx(0.643501, abs=1e-6)

    def test_normalizes_scale(self):
        assert decode_angle(6.0, 8.0) == pytest.approx(decode_angle(0.6, 0.8))

    def test_zero_pair_rejected(self):
        with pytest.raises(ValueError):
            decode_angle(0.0, 0.0)


class TestForward:
    def test_zero_params_give_uniform_policy(self, tiny_net, rng):
        for _, tensor in tiny_net.parameter_items():
            tensor.data = np.zeros_like(tensor.data)
        depth, audio, prev = random_inputs(rng, 3, tiny_net)
        out = tiny_net.forward(depth, audio, prev, tiny_net.initial_hidden(3), 0.0)
        assert np.array_equal(out.action_logits.data, np.zeros((3, 4), dtype=np.float32))
        probs = np.exp(out.action_logits.data)
        probs /= probs.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(probs, 0.25)

    def test_adversary_weight_never_changes_forward(self, tiny_net, rng):
        depth, audio, prev = random_inputs(rng, 2, tiny_net)
        hidden = tiny_net.initial_hidden(2)
        outs = [tiny_net.forward(depth, audio, prev, hidden, w) for w in (0.0, 1.0)]
        for field in ("action_logits", "value", "class_logits", "angle_pred", "hidden"):
            a = getattr(outs[0], field).data
            b = getattr(outs[1], field).data
            assert np.array_equal(a, b)

    def test_hidden_state_matters(self, tiny_net, rng):
        depth, audio, prev = random_inputs(rng, 2, tiny_net)
        h0 = tiny_net.initial_hidden(2)
        h1 = rng.standard_normal((2, 128)).astype(np.float32) * 0.5
        out0 = tiny_net.forward(depth, audio, prev, h0, 0.0)
        out1 = tiny_net.forward(depth, audio, prev, h1, 0.0)
        assert not np.array_equal(out0.hidden.data, out1.hidden.data)

    def test_replay_is_bit_exact(self, tiny_net, rng):
        frames = [random_inputs(rng, 1, tiny_net) for _ in range(6)]

        def run():
            hidden = tiny_net.initial_hidden(1)
            outputs = []
            for depth, audio, prev in frames:
                out = tiny_net.forward(depth, audio, prev, hidden, 0.0)
                hidden = out.hidden.data
                outputs.append(hidden.copy())
            return outputs

        for a, b in zip(run(), run()):
            assert np.array_equal(a, b)

    def test_output_shapes(self, tiny_net, rng):
        depth, audio, prev = random_inputs(rng, 5, tiny_net)
        out = tiny_net.forward(depth, audio, prev, tiny_net.initial_hidden(5), 0.3)
        assert out.action_logits.data.shape == (5, 4)
        assert out.value.data.shape == (5,)
        assert out.class_logits.data.shape == (5, 4)
        assert out.angle_pred.data.shape == (5, 4)
        assert out.hidden.data.shape == (5, 128)


class TestGradientRouting:
    def test_classifier_loss_never_reaches_visual_encoder(self, tiny_net, rng):
        depth, audio, prev = random_inputs(rng, 3, tiny_net)
        labels = np.array([0, 1, 2])
        tiny_net.zero_grads()
        with Tape() as tape:
            out = tiny_net.forward(depth, audio, prev, tiny_net.initial_hidden(3), 0.5)
            tape.backward(ad.cross_entropy(out.class_logits, labels))
        for name, tensor in tiny_net.parameter_items():
            grad_norm = float(np.abs(tensor.grad).max())
            if name.startswith(("visual_encoder.", "core.", "actor.", "critic.",
                                "location_predictor.")):
                assert grad_norm == 0.0, name
            elif name.startswith("audio_classifier.") or name.startswith("audio_encoder.w0"):
                assert grad_norm > 0.0, name

    def test_direction_loss_never_reaches_classifier(self, tiny_net, rng):
        depth, audio, prev = random_inputs(rng, 3, tiny_net)
        target = rng.standard_normal((3, 4)).astype(np.float32)
        tiny_net.zero_grads()
        with Tape() as tape:
            out = tiny_net.forward(depth, audio, prev, tiny_net.initial_hidden(3), 0.5)
            tape.backward(ad.mse(out.angle_pred, Tensor(target)))
        for name, tensor in tiny_net.parameter_items():
            grad_norm = float(np.abs(tensor.grad).max())
            if name.startswith("audio_classifier."):
                assert grad_norm == 0.0, name
            elif name.startswith(("location_predictor.", "core.wx")):
                assert grad_norm > 0.0, name

    def test_adversarial_sign_exact_at_reversal_input(self, tiny_net, rng):
        # at the reversal layer's own input the -w scaling is bit-exact
        labels = np.array([0, 1, 2, 3])
        embed_data = rng.uniform(0, 1, size=(4, 64)).astype(np.float32)
        strength = 0.625

        def embedding_grad(bypass):
            emb = Tensor(embed_data, requires_grad=True)
            with Tape() as tape:
                x = emb if bypass else ad.grad_reverse(emb, strength)
                tape.backward(ad.cross_entropy(tiny_net.classify(x), labels))
            return emb.grad.copy()

        plain = embedding_grad(bypass=True)
        through = embedding_grad(bypass=False)
        assert np.array_equal(through, np.float32(-strength) * plain)

    def test_adversarial_sign_property_on_encoder(self, tiny_net, rng):
        # encoder grads from the classifier loss equal -w times the grads
        # computed without the reversal layer, to float32 precision
        depth, audio, prev = random_inputs(rng, 4, tiny_net)
        labels = np.array([0, 1, 2, 3])
        strength = 0.625

        def classifier_grads(weight, bypass):
            tiny_net.zero_grads()
            with Tape() as tape:
                embed = tiny_net.encode_audio(Tensor(audio))
                if not bypass:
                    embed = ad.grad_reverse(embed, weight)
                tape.backward(ad.cross_entropy(tiny_net.classify(embed), labels))
            return {n: t.grad.copy() for n, t in tiny_net.group_items("audio_encoder")}

        plain = classifier_grads(0.0, bypass=True)
        reversed_ = classifier_grads(strength, bypass=False)
        for name in plain:
            np.testing.assert_allclose(reversed_[name], -strength * plain[name],
                                       rtol=2e-5, atol=1e-8, err_msg=name)


class TestAct:
    def test_dominant_logit_wins_both_modes(self, rng):
        logits = np.array([0.0, 0.0, 0.0, 50.0], dtype=np.float32)
        assert act(logits, rng, "sample")[0] == 3
        assert act(logits, None, "greedy")[0] == 3

    def test_greedy_tie_break_lowest_index(self):
        action, logprob = act(np.zeros(4, dtype=np.float32), None, "greedy")
        assert action == 0
        assert logprob == pytest.approx(math.log(0.25))

    def test_sample_frequencies_match_softmax(self):
        rng = np.random.Generator(np.random.PCG64(3))
        logits = np.array([1.0, 0.0, -1.0, 0.5], dtype=np.float32)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        counts = np.zeros(4)
        draws = 100_000
        for _ in range(draws):
            counts[act(logits, rng, "sample")[0]] += 1
        np.testing.assert_allclose(counts / draws, p, atol=0.01)

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(ValueError):
            act(np.zeros(4), rng, "argmax")

    def test_logprob_consistent(self, rng):
        logits = np.array([2.0, -1.0, 0.3, 0.0], dtype=np.float32)
        action, logprob = act(logits, rng, "sample")
        z = logits.astype(np.float64)
        p = np.exp(z - z.max())
        p /= p.sum()
        assert logprob == pytest.approx(math.log(p[action]), rel=1e-9)


class TestAngleTargetWellFormedness:
    def test_sin_cos_pairs_unit_norm(self, rng):
        # any (yaw, pitch) target encoded the trainer's way is unit-norm per angle
        from echonav.trainer import _angle_targets
        for _ in range(100):
            yaw = rng.uniform(-math.pi, math.pi)
            pitch = rng.uniform(0, math.pi / 2)
            t = _angle_targets(yaw, pitch)
            assert t[0] ** 2 + t[1] ** 2 == pytest.approx(1.0, abs=1e-6)
            assert t[2] ** 2 + t[3] ** 2 == pytest.approx(1.0, abs=1e-6)
