import math

import numpy as np
import pytest

from exted.errors import ContractError, DimensionError, InputError, NumericError
from exted.gradcheck import check_model_gradients, run_gradcheck_suite
from exted.model import (
    AdamHyper,
    AdamState,
    ExtEdParams,
    Gradients,
    ModelConfig,
    adam_step,
    backward,
    decode_step,
    encode,
    forward_losses,
    generate,
    init_params,
    predict_external_context,
    sequence_nll,
)
from exted.numeric import LstmParams, RngState, lstm_cell_forward
from exted.text import PAD, SOS
from helpers import scalar_lstm_forward, triple_loop_matmul


def make_cfg(**kw):
    base = dict(vocab_size=10, embed_dim=4, hidden_dim=5, ec_dim=3, mode="ext_ed")
    base.update(kw)
    return ModelConfig(**base)


def zero_params(cfg):
    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ec_dim
    din = cfg.decoder_input_dim
    return ExtEdParams(
        embedding=np.zeros((v, e)),
        encoder=LstmParams(np.zeros((4 * h, e)), np.zeros((4 * h, h)), np.zeros((4 * h, 1))),
        f_weight=np.zeros((d, h)),
        f_bias=np.zeros((d, 1)),
        decoder=LstmParams(np.zeros((4 * h, din)), np.zeros((4 * h, h)), np.zeros((4 * h, 1))),
        proj_w=np.zeros((v, h)),
        proj_b=np.zeros((v, 1)),
    )


def random_params(cfg, seed=0, scale=0.6):
    rng = np.random.default_rng(seed)

    def t(r, c):
        return rng.standard_normal((r, c)) * scale

    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ec_dim
    din = cfg.decoder_input_dim
    return ExtEdParams(
        embedding=t(v, e),
        encoder=LstmParams(t(4 * h, e), t(4 * h, h), t(4 * h, 1)),
        f_weight=t(d, h),
        f_bias=t(d, 1),
        decoder=LstmParams(t(4 * h, din), t(4 * h, h), t(4 * h, 1)),
        proj_w=t(v, h),
        proj_b=t(v, 1),
    )


class TestEncode:
    def test_zero_params_zero_state(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        h, c, caches = encode(p, [4, 5, 6])
        assert np.array_equal(h, np.zeros((5, 1)))
        assert np.array_equal(c, np.zeros((5, 1)))
        assert len(caches) == 3

    def test_single_token_equals_one_cell_step(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=1)
        h, c, _ = encode(p, [7])
        x = p.embedding[7].reshape(-1, 1)
        h1, c1, _ = lstm_cell_forward(x, np.zeros((5, 1)), np.zeros((5, 1)), p.encoder)
        assert np.array_equal(h, h1)
        assert np.array_equal(c, c1)

    def test_matches_scalar_oracle(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=2)
        ids = [4, 9, 5, 8, 6]
        h, c, _ = encode(p, ids)
        h_ref = np.zeros((5, 1))
        c_ref = np.zeros((5, 1))
        for tid in ids:
            x = p.embedding[tid].reshape(-1, 1)
            h_ref, c_ref = scalar_lstm_forward(x, h_ref, c_ref, p.encoder.w_x, p.encoder.w_h, p.encoder.b)
        assert np.allclose(h, h_ref, rtol=1e-12, atol=1e-14)
        assert np.allclose(c, c_ref, rtol=1e-12, atol=1e-14)

    def test_empty_context_rejected(self):
        cfg = make_cfg()
        with pytest.raises(InputError):
            encode(zero_params(cfg), [])

    def test_out_of_range_id(self):
        cfg = make_cfg()
        with pytest.raises(InputError):
            encode(zero_params(cfg), [4, 99])


class TestPredictExternalContext:
    def test_zero_head(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        out = predict_external_context(p, np.ones((5, 1)))
        assert np.array_equal(out, np.zeros((3, 1)))

    def test_identity_head(self):
        cfg = make_cfg(hidden_dim=3, ec_dim=3)
        p = zero_params(cfg)
        p.f_weight[:] = np.eye(3)
        h = np.array([[0.1], [-0.5], [2.0]])
        assert np.array_equal(predict_external_context(p, h), h)

    def test_matches_matmul_oracle(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=3)
        h = np.random.default_rng(4).standard_normal((5, 1))
        expected = triple_loop_matmul(p.f_weight, h) + p.f_bias
        assert np.array_equal(predict_external_context(p, h), expected)

    def test_shape_mismatch(self):
        cfg = make_cfg()
        with pytest.raises(DimensionError):
            predict_external_context(zero_params(cfg), np.zeros((4, 1)))


class TestDecodeStep:
    def test_zero_params_uniform_logits(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        state = (np.zeros((5, 1)), np.zeros((5, 1)))
        logits, _, _ = decode_step(p, SOS, state, np.zeros((5, 1)), np.zeros((3, 1)))
        assert np.array_equal(logits, np.zeros((10, 1)))

    def test_ec_invariance_with_zero_ec_columns(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=5)
        e, h = cfg.embed_dim, cfg.hidden_dim
        p.decoder.w_x[:, e + h :] = 0.0
        state = (np.zeros((5, 1)), np.zeros((5, 1)))
        h_enc = np.random.default_rng(6).standard_normal((5, 1))
        rng = np.random.default_rng(7)
        logits_a, _, _ = decode_step(p, 4, state, h_enc, rng.standard_normal((3, 1)))
        logits_b, _, _ = decode_step(p, 4, state, h_enc, rng.standard_normal((3, 1)))
        assert np.array_equal(logits_a, logits_b)

    def test_matches_scalar_oracle(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=8)
        rng = np.random.default_rng(9)
        h_enc = rng.standard_normal((5, 1))
        ec = rng.standard_normal((3, 1))
        h0 = rng.standard_normal((5, 1))
        c0 = rng.standard_normal((5, 1))
        logits, (h1, c1), _ = decode_step(p, 6, (h0, c0), h_enc, ec)
        x = np.concatenate([p.embedding[6].reshape(-1, 1), h_enc, ec])
        h_ref, c_ref = scalar_lstm_forward(x, h0, c0, p.decoder.w_x, p.decoder.w_h, p.decoder.b)
        logits_ref = triple_loop_matmul(p.proj_w, h_ref) + p.proj_b
        assert np.allclose(h1, h_ref, rtol=1e-12, atol=1e-14)
        assert np.allclose(logits, logits_ref, rtol=1e-11, atol=1e-13)

    def test_ec_in_vanilla_rejected(self):
        cfg = make_cfg(mode="vanilla")
        p = zero_params(cfg)
        state = (np.zeros((5, 1)), np.zeros((5, 1)))
        with pytest.raises(ContractError):
            decode_step(p, 4, state, np.zeros((5, 1)), np.zeros((3, 1)))

    def test_missing_ec_rejected(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        state = (np.zeros((5, 1)), np.zeros((5, 1)))
        with pytest.raises(ContractError):
            decode_step(p, 4, state, np.zeros((5, 1)), None)


class TestForwardLosses:
    def test_uniform_l1(self):
        cfg = ModelConfig(vocab_size=4, embed_dim=2, hidden_dim=2, ec_dim=2, mode="ext_ed")
        p = zero_params(cfg)
        breakdown, _ = forward_losses(p, [3], [3], np.zeros((2, 1)), cfg)
        assert breakdown.tokens == 2
        assert breakdown.l1 == pytest.approx(2 * math.log(4.0), abs=1e-12)

    def test_l2_zero_when_prediction_matches(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        breakdown, _ = forward_losses(p, [4], [5], np.zeros((3, 1)), cfg)
        assert breakdown.l2 == 0.0

    def test_l3_cap_exact_at_uniform(self):
        cfg = ModelConfig(vocab_size=4, embed_dim=2, hidden_dim=2, ec_dim=2, mode="ext_ed")
        p = zero_params(cfg)
        breakdown, caches = forward_losses(p, [3], [3], np.zeros((2, 1)), cfg)
        assert caches.cap_active
        assert breakdown.l3 == -math.log(4.0)

    def test_missing_ec_true_rejected(self):
        cfg = make_cfg()
        with pytest.raises(InputError):
            forward_losses(zero_params(cfg), [4], [5], None, cfg)

    def test_vanilla_needs_no_ec(self):
        cfg = make_cfg(mode="vanilla")
        breakdown, _ = forward_losses(zero_params(cfg), [4], [5], None, cfg)
        assert breakdown.l2 == 0.0
        assert breakdown.l3 == 0.0
        assert breakdown.total == breakdown.l1

    def test_total_recomposes_exactly(self):
        cfg = make_cfg(lambda2=0.7, lambda3=1.3)
        p = random_params(cfg, seed=11)
        ec = np.random.default_rng(12).standard_normal((3, 1))
        b, _ = forward_losses(p, [4, 5], [6, 7], ec, cfg)
        assert b.total == b.l1 + cfg.lambda2_effective * b.l2 + cfg.lambda3_effective * b.l3

    def test_minus_l3_mode_drops_l3(self):
        cfg = make_cfg(mode="ext_ed_minus_L3", lambda2=0.5, lambda3=9.9)
        p = random_params(cfg, seed=13)
        ec = np.random.default_rng(14).standard_normal((3, 1))
        b, _ = forward_losses(p, [4, 5], [6], ec, cfg)
        assert b.l3 == 0.0
        assert b.total == b.l1 + 0.5 * b.l2

    def test_per_token_l1_at_uniform_point(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        b, _ = forward_losses(p, [4, 5, 6], [7, 8], np.zeros((3, 1)), cfg)
        assert b.l1 / b.tokens == pytest.approx(math.log(cfg.vocab_size), abs=1e-12)

    def test_structural_ablation_invariance(self):
        # zero ec columns in the decoder input weights: L1 and generations
        # must ignore the supplied external vector entirely
        cfg = make_cfg(train_ec_feed="true", eval_ec_mode="oracle")
        p = random_params(cfg, seed=15)
        e, h = cfg.embed_dim, cfg.hidden_dim
        p.decoder.w_x[:, e + h :] = 0.0
        rng = np.random.default_rng(16)
        ec_a = rng.standard_normal((3, 1))
        ec_b = rng.standard_normal((3, 1)) * 5
        b_a, _ = forward_losses(p, [4, 5], [6, 7], ec_a, cfg)
        b_b, _ = forward_losses(p, [4, 5], [6, 7], ec_b, cfg)
        assert b_a.l1 == b_b.l1
        assert b_a.l2 != b_b.l2
        assert generate(p, [4, 5], 6, cfg, ec_true=ec_a) == generate(
            p, [4, 5], 6, cfg, ec_true=ec_b
        )


class TestBackward:
    def test_cap_active_kills_l3_gradient(self):
        cfg_on = make_cfg(lambda3=5.0)
        cfg_off = make_cfg(lambda3=0.0)
        p = zero_params(cfg_on)  # uniform point, cap active
        ec = np.random.default_rng(17).standard_normal((3, 1))
        b_on, caches_on = forward_losses(p, [4, 5], [6], ec, cfg_on)
        assert caches_on.cap_active
        g_on = backward(p, caches_on, cfg_on)
        _, caches_off = forward_losses(p, [4, 5], [6], ec, cfg_off)
        g_off = backward(p, caches_off, cfg_off)
        for name in g_on.tensors:
            assert np.array_equal(g_on.tensors[name], g_off.tensors[name])

    def test_foreign_caches_rejected(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=18)
        q = random_params(cfg, seed=19)
        ec = np.zeros((3, 1))
        _, caches = forward_losses(p, [4], [5], ec, cfg)
        with pytest.raises(ContractError):
            backward(q, caches, cfg)

    def test_mode_mismatch_rejected(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=20)
        _, caches = forward_losses(p, [4], [5], np.zeros((3, 1)), cfg)
        other = make_cfg(mode="ext_ed_minus_L3")
        with pytest.raises(ContractError):
            backward(p, caches, other)

    @pytest.mark.parametrize("mode", ["vanilla", "ext_ed", "ext_ed_minus_L3"])
    def test_gradients_match_finite_differences(self, mode):
        cfg = ModelConfig(
            vocab_size=8, embed_dim=3, hidden_dim=4, ec_dim=3,
            lambda2=0.8, lambda3=1.1, mode=mode,
        )
        report = check_model_gradients(cfg, seed=23)
        assert report.passed, [(c.name, c.max_rel_err) for c in report.checks if not c.passed]


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        cfg = make_cfg()
        p = random_params(cfg, seed=24)
        state = AdamState.zeros_like(p)
        grads = Gradients.zeros_like(p)
        p2, state2 = adam_step(p, grads, state, AdamHyper())
        for (_, a), (_, b) in zip(p.named_tensors(), p2.named_tensors()):
            assert np.array_equal(a, b)
        assert state2.t == 1

    def test_first_step_is_signed_lr(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        grads = Gradients.zeros_like(p)
        g = np.random.default_rng(25).standard_normal(p.embedding.shape)
        g[np.abs(g) < 0.1] = 0.5  # keep magnitudes well above adam eps
        grads.tensors["embedding"] = g
        hyper = AdamHyper(lr=1e-3)
        p2, _ = adam_step(p, grads, AdamState.zeros_like(p), hyper)
        update = p2.embedding - p.embedding
        assert np.allclose(update, -hyper.lr * np.sign(g), atol=hyper.lr * 1e-4)

    def test_quadratic_bowl_descent(self):
        cfg = ModelConfig(vocab_size=4, embed_dim=2, hidden_dim=2, ec_dim=2)
        p = zero_params(cfg)
        p.embedding[:] = np.random.default_rng(26).standard_normal(p.embedding.shape)
        state = AdamState.zeros_like(p)
        hyper = AdamHyper(lr=0.05)
        losses = []
        for _ in range(100):
            losses.append(float(np.sum(p.embedding**2)))
            grads = Gradients.zeros_like(p)
            grads.tensors["embedding"] = 2.0 * p.embedding
            p, state = adam_step(p, grads, state, hyper)
        losses.append(float(np.sum(p.embedding**2)))
        for k in range(5, 100):
            assert losses[k + 1] < losses[k]

    def test_nonfinite_gradient_named(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        grads = Gradients.zeros_like(p)
        grads.tensors["proj_w"][0, 0] = np.nan
        with pytest.raises(NumericError, match="proj_w"):
            adam_step(p, grads, AdamState.zeros_like(p), AdamHyper())


class TestGenerate:
    def test_zero_params_emits_pad(self):
        cfg = make_cfg()
        p = zero_params(cfg)
        out = generate(p, [4, 5], 7, cfg)
        assert out == [PAD] * 7

    def test_max_len_validated(self):
        cfg = make_cfg()
        with pytest.raises(InputError):
            generate(zero_params(cfg), [4], 0, cfg)

    def test_overfit_single_pair_reproduces_response(self):
        cfg = ModelConfig(
            vocab_size=10, embed_dim=6, hidden_dim=8, ec_dim=4,
            mode="ext_ed", eval_ec_mode="predicted",
        )
        p = init_params(cfg, RngState(3))
        state = AdamState.zeros_like(p)
        hyper = AdamHyper(lr=0.01)
        ctx, resp = [4, 5], [6, 7, 8]
        ec = np.random.default_rng(27).standard_normal((4, 1))
        for _ in range(400):
            _, caches = forward_losses(p, ctx, resp, ec, cfg)
            grads = backward(p, caches, cfg)
            p, state = adam_step(p, grads, state, hyper)
        assert generate(p, ctx, 10, cfg) == resp
        nll, tok = sequence_nll(p, ctx, resp, ec, cfg)
        assert math.exp(nll / tok) < 1.05


class TestSequenceNll:
    def test_matches_forward_losses_l1(self):
        cfg = make_cfg(train_ec_feed="true", eval_ec_mode="oracle")
        p = random_params(cfg, seed=28)
        ec = np.random.default_rng(29).standard_normal((3, 1))
        b, _ = forward_losses(p, [4, 5, 6], [7, 8], ec, cfg)
        nll, tok = sequence_nll(p, [4, 5, 6], [7, 8], ec, cfg)
        assert nll == pytest.approx(b.l1, abs=1e-12)
        assert tok == b.tokens

    def test_predicted_matches_predicted_feed(self):
        cfg = make_cfg(train_ec_feed="predicted", eval_ec_mode="predicted")
        p = random_params(cfg, seed=30)
        ec = np.random.default_rng(31).standard_normal((3, 1))
        b, _ = forward_losses(p, [4, 9], [5], ec, cfg)
        nll, _ = sequence_nll(p, [4, 9], [5], None, cfg)
        assert nll == pytest.approx(b.l1, abs=1e-12)

    def test_oracle_requires_vector(self):
        cfg = make_cfg(eval_ec_mode="oracle")
        with pytest.raises(InputError):
            sequence_nll(zero_params(cfg), [4], [5], None, cfg)


class TestGradcheckSuite:
    def test_small_suite_passes(self):
        reports, ok = run_gradcheck_suite(seed=5, configs_per_mode=1)
        assert ok, [(r.mode, r.max_rel_err) for r in reports if not r.passed]
        assert len(reports) == 3
