"""Gate multipliers, prototype/linear/hybrid logits."""

import numpy as np
import pytest

from mcrfm import autodiff as ad
from mcrfm.config import TrainConfig
from mcrfm.context import build_prototypes, encode_context, init_task_encoder
from mcrfm.geometry import PoincareBall
from mcrfm.heads import (
    gate_multipliers,
    hybrid_logits,
    init_heads,
    linear_logits,
    proto_logits,
)
from mcrfm.manifold import ProductState

RNG = np.random.default_rng(99)


def cfg_small(**kw):
    defaults = dict(hyp_dim=4, euc_dim=4, context_dim=8, token_dim=8, stats_dim=4,
                    trunk_width=12, time_dim=8, gate_hidden=8)
    defaults.update(kw)
    return TrainConfig(**defaults)


def setup(cfg, k=3, n=6):
    params = {}
    init_task_encoder(params, RNG, cfg)
    init_heads(params, RNG, cfg, k)
    ball = PoincareBall(cfg.curvature)
    u_h = RNG.normal(size=(2 * k, cfg.hyp_dim)) * 0.4
    u_e = RNG.normal(size=(2 * k, cfg.euc_dim))
    bank = build_prototypes(ball, u_h, u_e, np.arange(2 * k) % k, k, 0.2)
    ctx = encode_context(params, cfg, ball, bank)
    state = ProductState(
        ball.project(RNG.normal(size=(n, cfg.hyp_dim)) * 0.3),
        RNG.normal(size=(n, cfg.euc_dim)),
    )
    return params, ball, bank, ctx, state


class TestGate:
    def test_neutral_at_init(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        g, m_h, m_e = gate_multipliers(params, cfg, ball, state, ctx)
        assert np.allclose(ad.val(g), 0.5, atol=1e-15)
        assert np.allclose(ad.val(m_h), 1.0, atol=1e-15)
        assert np.allclose(ad.val(m_e), 1.0, atol=1e-15)

    def test_multipliers_sum_to_two(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.gate.bias_raw"].value = np.array(1.7)
        params["heads.gate.delta.out.weight"].value = RNG.normal(size=(8, 1))
        g, m_h, m_e = gate_multipliers(params, cfg, ball, state, ctx)
        assert np.allclose(ad.val(m_h) + ad.val(m_e), 2.0, atol=1e-12)
        assert np.all((ad.val(g) > 0) & (ad.val(g) < 1))

    def test_disabled_gate_pins_multipliers(self):
        cfg = cfg_small(adaptive_gate=False)
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.gate.bias_raw"].value = np.array(5.0)  # must be ignored
        g, m_h, m_e = gate_multipliers(params, cfg, ball, state, ctx)
        assert np.all(ad.val(g) == 0.5)
        assert np.all(ad.val(m_h) == 1.0)

    def test_extreme_gate_shifts_weight_between_branches(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.gate.bias_raw"].value = np.array(30.0)  # g -> 1
        _, m_h, m_e = gate_multipliers(params, cfg, ball, state, ctx)
        assert np.allclose(ad.val(m_h), 2.0, atol=1e-10)
        assert np.allclose(ad.val(m_e), 0.0, atol=1e-10)


class TestProtoLogits:
    def test_argmax_is_nearest_prototype(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg, n=10)
        ones = np.ones((10, 1))
        logits = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        # brute-force product distances with the same weights
        gamma_h = float(ad.val(ad.softplus(params["heads.hyp_gamma_raw"])))
        gamma_e = float(ad.val(ad.softplus(params["heads.euc_gamma_raw"])))
        for i in range(10):
            dists = []
            for k in range(bank.num_classes):
                dh = ball.dist(ad.val(state.hyp)[i], ad.val(bank.hyp)[k]).item()
                de = np.linalg.norm(ad.val(state.euc)[i] - ad.val(bank.euc)[k])
                dists.append(gamma_h * dh**2 + gamma_e * de**2)
            assert np.argmax(logits[i]) == np.argmin(dists)
            assert np.allclose(logits[i], -np.array(dists), atol=1e-9)

    def test_state_at_prototype_scores_zero_and_wins(self):
        cfg = cfg_small()
        params, ball, bank, ctx, _ = setup(cfg)
        state = ProductState(ad.val(bank.hyp)[1:2], ad.val(bank.euc)[1:2])
        ones = np.ones((1, 1))
        logits = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        assert logits[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert np.argmax(logits[0]) == 1
        assert np.all(np.delete(logits[0], 1) < 0)

    def test_equidistant_point_ties_two_classes(self):
        # two prototypes mirrored on a line, query at the midpoint axis
        cfg = cfg_small()
        params, ball, bank, ctx, _ = setup(cfg, k=2)
        hyp = np.zeros((2, 4))
        hyp[0, 0], hyp[1, 0] = 0.4, -0.4
        euc = np.zeros((2, 4))
        euc[0, 1], euc[1, 1] = 1.0, -1.0
        mirrored = type(bank)(hyp, euc, 2, 0.0)
        state = ProductState(np.zeros((1, 4)), np.zeros((1, 4)))
        ones = np.ones((1, 1))
        logits = ad.val(proto_logits(params, cfg, ball, state, mirrored, ones, ones))
        assert logits[0, 0] == pytest.approx(logits[0, 1], abs=1e-12)

    def test_doubling_gammas_doubles_logits(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        ones = np.ones((6, 1))
        base = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        for name in ("heads.hyp_gamma_raw", "heads.euc_gamma_raw"):
            gamma = np.log1p(np.exp(params[name].value))
            params[name].value = np.log(np.expm1(2.0 * gamma))
        doubled = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        assert np.allclose(doubled, 2.0 * base, atol=1e-9)
        assert np.array_equal(np.argmax(doubled, axis=1), np.argmax(base, axis=1))


class TestLinearLogits:
    def test_zero_init_head_returns_bias(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        ones = np.ones((6, 1))
        logits = ad.val(linear_logits(params, cfg, ball, state, ones, ones))
        assert np.all(logits == 0.0)  # W_c = 0, b_c = 0 at init

    def test_hyp_multiplier_zero_silences_hyp_half(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.lin.weight"].value = RNG.normal(size=(8, 3))
        ones = np.ones((6, 1))
        zeros = np.zeros((6, 1))
        base = ad.val(linear_logits(params, cfg, ball, state, zeros, ones))
        # changing the hyperbolic half of W_c must not matter when m_h = 0
        params["heads.lin.weight"].value[: cfg.hyp_dim] += RNG.normal(size=(cfg.hyp_dim, 3))
        after = ad.val(linear_logits(params, cfg, ball, state, zeros, ones))
        assert np.allclose(base, after, atol=1e-12)

    def test_unit_multipliers_are_plain_linear_head(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.lin.weight"].value = RNG.normal(size=(8, 3))
        params["heads.lin.bias"].value = RNG.normal(size=3)
        ones = np.ones((6, 1))
        logits = ad.val(linear_logits(params, cfg, ball, state, ones, ones))
        from mcrfm.heads import branch_features

        r_h, r_e = branch_features(params, cfg, ball, state, "cls")
        joint = np.concatenate([ad.val(r_h), ad.val(r_e)], axis=-1)
        expected = joint @ params["heads.lin.weight"].value + params["heads.lin.bias"].value
        assert np.allclose(logits, expected, atol=1e-12)


class TestHybrid:
    def test_mix_limits(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.lin.weight"].value = RNG.normal(size=(8, 3))
        ones = np.ones((6, 1))
        proto = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        lin = ad.val(linear_logits(params, cfg, ball, state, ones, ones))
        params["heads.mix.bias_raw"].value = np.array(40.0)  # beta -> 1
        logits, mix = hybrid_logits(params, cfg, ball, state, bank, ctx, ones, ones)
        assert np.allclose(ad.val(logits), proto, atol=1e-8)
        params["heads.mix.bias_raw"].value = np.array(-40.0)  # beta -> 0
        logits, mix = hybrid_logits(params, cfg, ball, state, bank, ctx, ones, ones)
        assert np.allclose(ad.val(logits), lin, atol=1e-8)

    def test_mix_strictly_inside_unit_interval(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.mix.bias_raw"].value = np.array(3.0)
        _, mix = hybrid_logits(params, cfg, ball, state, bank, ctx,
                               np.ones((6, 1)), np.ones((6, 1)))
        assert np.all((ad.val(mix) > 0.0) & (ad.val(mix) < 1.0))

    def test_shared_argmax_is_preserved_for_any_mix(self):
        cfg = cfg_small()
        params, ball, bank, ctx, state = setup(cfg, n=20)
        ones = np.ones((20, 1))
        proto = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        # craft a linear head matching the prototype head's argmax
        params["heads.lin.bias"].value = np.zeros(3)
        params["heads.lin.weight"].value = np.zeros((8, 3))
        lin = ad.val(linear_logits(params, cfg, ball, state, ones, ones))
        agree = np.argmax(proto, axis=1) == np.argmax(lin + proto * 0, axis=1)
        for bias in (-2.0, 0.0, 2.0):
            params["heads.mix.bias_raw"].value = np.array(bias)
            logits, _ = hybrid_logits(params, cfg, ball, state, bank, ctx, ones, ones)
            hybrid_arg = np.argmax(ad.val(logits), axis=1)
            # wherever both heads agreed, the convex mix agrees too
            both = np.argmax(proto, axis=1)
            assert np.all(hybrid_arg[agree] == both[agree])

    def test_head_mode_proto_and_linear(self):
        ones = np.ones((6, 1))
        cfg = cfg_small(head_mode="proto")
        params, ball, bank, ctx, state = setup(cfg)
        logits, _ = hybrid_logits(params, cfg, ball, state, bank, ctx, ones, ones)
        expected = ad.val(proto_logits(params, cfg, ball, state, bank, ones, ones))
        assert np.array_equal(ad.val(logits), expected)

        cfg = cfg_small(head_mode="linear")
        params, ball, bank, ctx, state = setup(cfg)
        logits, _ = hybrid_logits(params, cfg, ball, state, bank, ctx, ones, ones)
        assert np.array_equal(ad.val(logits),
                              ad.val(linear_logits(params, cfg, ball, state, ones, ones)))

    def test_fixed_mixer_when_disabled(self):
        cfg = cfg_small(adaptive_mixer=False)
        params, ball, bank, ctx, state = setup(cfg)
        params["heads.mix.bias_raw"].value = np.array(9.0)  # ignored
        _, mix = hybrid_logits(params, cfg, ball, state, bank, ctx,
                               np.ones((6, 1)), np.ones((6, 1)))
        assert np.all(ad.val(mix) == 0.5)


def test_all_head_gradients():
    from mcrfm.autodiff import finite_difference_check

    cfg = cfg_small()
    params, ball, bank, ctx, state = setup(cfg, n=4)
    params["heads.lin.weight"].value = RNG.normal(size=(8, 3)) * 0.3
    params["heads.gate.delta.out.weight"].value = RNG.normal(size=(8, 1)) * 0.3
    params["heads.mix.delta.out.weight"].value = RNG.normal(size=(8, 1)) * 0.3
    plist = [params[k] for k in sorted(params) if k.startswith("heads.")]

    def loss():
        g, m_h, m_e = gate_multipliers(params, cfg, ball, state, ctx)
        logits, mix = hybrid_logits(params, cfg, ball, state, bank, ctx, m_h, m_e)
        return ad.add(ad.tsum(ad.square(logits)), ad.tsum(ad.square(mix)))

    assert finite_difference_check(loss, plist) <= 1e-4
