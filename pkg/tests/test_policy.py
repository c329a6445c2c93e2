import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairrl import autodiff as ad
from pairrl.autodiff import Tensor, backward, grad_check
from pairrl.env import EnvConfig, Entity, Gripper, Renderer, SceneState
from pairrl.errors import ContractError, DimensionError, NumericError
from pairrl.policy import (
    Categorical,
    DiagGaussian,
    Policy,
    categorical_kl_probs,
    entropy,
    kl,
    log_prob,
    mode,
    sample,
)
from pairrl.splits import LightingConfig


def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def gauss(mean, log_std):
    return DiagGaussian(t64(np.atleast_2d(mean)), t64(log_std))


def cat(logits):
    return Categorical(t64(np.atleast_2d(logits)))


# -- log_prob -----------------------------------------------------------------------------

def test_gaussian_log_prob_standard_normal():
    assert log_prob(gauss([0.0], [0.0]), [[0.0]]).data[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert log_prob(gauss([0.0], [0.0]), [[0.0]]).data[0] == pytest.approx(-0.9189, abs=1e-4)


def test_categorical_log_prob_uniform():
    assert log_prob(cat([0.0, 0.0]), [0]).data[0] == pytest.approx(-0.6931, abs=1e-4)


def test_categorical_out_of_range():
    with pytest.raises(ContractError):
        log_prob(cat([0.0, 0.0]), [2])
    with pytest.raises(ContractError):
        log_prob(cat([0.0, 0.0]), [-1])


def test_gaussian_action_shape_mismatch():
    with pytest.raises(DimensionError):
        log_prob(gauss([0.0, 0.0], [0.0, 0.0]), [[0.0]])


def test_gaussian_density_integrates_to_one():
    xs = np.linspace(-12, 12, 200_001)
    d = gauss(np.full((xs.size, 1), 0.7), [0.3])
    lp = log_prob(d, xs[:, None]).data
    assert np.trapezoid(np.exp(lp), xs) == pytest.approx(1.0, abs=1e-8)


# -- sample / mode -----------------------------------------------------------------------------

def test_sample_degenerate_gaussian():
    d = gauss([[0.3, -0.2]], [-5.0, -5.0])
    a = sample(d, np.random.default_rng(0))
    assert np.all(np.abs(a - [[0.3, -0.2]]) <= 3 * math.exp(-5) * 3)


def test_sample_point_mass_categorical():
    d = cat(np.tile([50.0, -50.0, -50.0], (200, 1)))
    assert np.all(sample(d, np.random.default_rng(1)) == 0)


def test_sample_gaussian_mean_clt():
    n = 100_000
    d = gauss(np.full((n, 1), 1.5), [math.log(2.0)])
    a = sample(d, np.random.default_rng(2))
    assert abs(a.mean() - 1.5) < 4 * 2.0 / math.sqrt(n)


def test_sample_deterministic_given_rng():
    d = cat(np.random.default_rng(0).normal(size=(50, 6)))
    assert np.array_equal(sample(d, np.random.default_rng(7)), sample(d, np.random.default_rng(7)))


def test_sample_categorical_frequencies():
    logits = np.log([0.1, 0.2, 0.7])
    a = sample(cat(np.tile(logits, (60_000, 1))), np.random.default_rng(3))
    np.testing.assert_allclose(np.bincount(a, minlength=3) / a.size, [0.1, 0.2, 0.7], atol=0.01)


def test_mode():
    assert mode(cat([[0.1, 2.0, -1.0]])).tolist() == [1]
    assert mode(gauss([[0.25]], [0.0])).tolist() == [[0.25]]


# -- KL and entropy ------------------------------------------------------------------------------

def test_kl_self_is_zero():
    rng = np.random.default_rng(0)
    p = cat(rng.normal(size=(5, 6)))
    assert np.abs(kl(p, p).data).max() < 1e-12
    g = gauss(rng.normal(size=(5, 3)), rng.normal(size=3) * 0.3)
    assert np.abs(kl(g, g).data).max() < 1e-12


def test_kl_unit_shift():
    assert kl(gauss([1.0], [0.0]), gauss([0.0], [0.0])).data[0] == pytest.approx(0.5, abs=1e-12)


def test_kl_unit_shift_monte_carlo():
    rng = np.random.default_rng(11)
    x = rng.normal(1.0, 1.0, size=1_000_000)
    est = np.mean(-0.5 * (x - 1.0) ** 2 + 0.5 * x ** 2)
    assert est == pytest.approx(0.5, abs=1e-2)


def test_kl_two_point():
    expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert expected == pytest.approx(0.5108, abs=1e-4)
    assert categorical_kl_probs([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
    assert kl(cat(np.log([0.5, 0.5])), cat(np.log([0.9, 0.1]))).data[0] == pytest.approx(expected, abs=1e-12)


def test_kl_zero_mass_conventions():
    assert categorical_kl_probs([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    with pytest.raises(NumericError):
        categorical_kl_probs([0.5, 0.5], [1.0, 0.0])


def test_kl_family_mismatch():
    with pytest.raises(ContractError):
        kl(cat([0.0, 0.0]), gauss([0.0, 0.0], [0.0, 0.0]))


def test_entropy_values():
    assert entropy(cat([0.0] * 4)).data[0] == pytest.approx(math.log(4), abs=1e-12)
    assert entropy(gauss([0.0], [0.0])).data[0] == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-12)
    assert entropy(gauss([0.0], [0.0])).data[0] == pytest.approx(1.4189, abs=1e-4)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-6, 6), min_size=2, max_size=7), st.lists(st.floats(-6, 6), min_size=2, max_size=7))
def test_categorical_kl_nonnegative(a, b):
    n = min(len(a), len(b))
    p, q = cat(a[:n]), cat(b[:n])
    val = kl(p, q).data[0]
    assert val >= -1e-12
    assert entropy(p).data[0] >= -1e-12
    if np.allclose(a[:n], b[:n]):
        assert abs(val) < 1e-9


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-2, 1), st.floats(-3, 3), st.floats(-2, 1)),
                min_size=1, max_size=4))
def test_gaussian_kl_nonnegative_and_closed_form(rows):
    r = np.array(rows)
    p = gauss(r[:, 0][None], r[:, 1])
    q = gauss(r[:, 2][None], r[:, 3])
    sp, sq = np.exp(r[:, 1]), np.exp(r[:, 3])
    ref = np.sum(np.log(sq / sp) + (sp ** 2 + (r[:, 0] - r[:, 2]) ** 2) / (2 * sq ** 2) - 0.5)
    assert kl(p, q).data[0] == pytest.approx(ref, rel=1e-10, abs=1e-12)
    assert kl(p, q).data[0] >= -1e-12


def test_log_std_clamp_zero_grad():
    pol = Policy(6, 2, head="continuous", hidden=4, seed=0, dtype=np.float64)
    pol.params["log_std"].set_data(np.array([3.0, 0.0]))
    out = pol.forward(np.zeros((1, 6)))
    g = backward(ad.sum_(entropy(out.dist)), pol.parameters())
    assert g[pol.params["log_std"]][0] == 0.0 and g[pol.params["log_std"]][1] != 0.0


# -- policy network ------------------------------------------------------------------------------

def test_zero_weights_gaussian_head():
    pol = Policy(12, 3, head="continuous", hidden=8, seed=0)
    pol.load_state_dict({k: np.zeros_like(v.data) for k, v in pol.params.items()})
    out = pol.forward(np.random.default_rng(0).normal(size=(4, 12)))
    assert np.all(out.dist.mean.data == 0) and np.all(out.value.data == 0)


def test_forward_deterministic():
    pol = Policy(12, 6, seed=1)
    x = np.random.default_rng(0).normal(size=(3, 12))
    a, b = pol.forward(x), pol.forward(x)
    assert a.dist.logits.data.tobytes() == b.dist.logits.data.tobytes()
    assert a.value.data.tobytes() == b.value.data.tobytes()


def test_forward_shape_check():
    pol = Policy(12, 6, seed=1)
    with pytest.raises(DimensionError):
        pol.forward(np.zeros((3, 11)))


def test_same_category_distractor_permutation_same_output():
    cfg = EnvConfig()
    r = Renderer(cfg)
    pol = Policy(cfg.obs_dim, cfg.action_dim, seed=0)

    def state(ds):
        return SceneState(Gripper(-0.32, 0.0), Entity(-0.23, 0.03, 0.0, 1),
                          tuple(Entity(x, y, 0.0, 6) for x, y in ds), (-0.41, -0.09), 0,
                          LightingConfig.identity(), 0.0)

    a = r.render(state([(-0.17, 0.09), (-0.47, 0.15)])).flat()[None]
    b = r.render(state([(-0.47, 0.15), (-0.17, 0.09)])).flat()[None]
    assert pol.forward(a).dist.logits.data.tobytes() == pol.forward(b).dist.logits.data.tobytes()


@pytest.mark.parametrize("head", ["discrete", "continuous"])
def test_log_prob_grad_check_full_policy(head):
    rng = np.random.default_rng(0)
    pol = Policy(20, 6 if head == "discrete" else 3, head=head, hidden=16, seed=2, dtype=np.float64)
    x = rng.normal(size=(5, 20))
    a = rng.integers(6, size=5) if head == "discrete" else rng.normal(size=(5, 3))
    err = grad_check(lambda: ad.sum_(log_prob(pol.forward(x).dist, a)), pol.parameters())
    assert err < 1e-4


def test_state_dict_roundtrip(tmp_path):
    pol = Policy(20, 3, head="continuous", hidden=16, seed=3)
    ad.save_checkpoint(tmp_path / "p.ckpt", pol.state_dict())
    back = Policy.from_state_dict(ad.load_checkpoint(tmp_path / "p.ckpt"))
    assert back.head == "continuous" and back.hidden == 16
    x = np.random.default_rng(0).normal(size=(2, 20))
    assert back.forward(x).dist.mean.data.tobytes() == pol.forward(x).dist.mean.data.tobytes()


def test_load_state_dict_rejects_mismatch():
    pol = Policy(20, 6, hidden=16)
    sd = pol.state_dict()
    sd.pop("b_v")
    with pytest.raises(ContractError):
        pol.load_state_dict(sd)
    sd = pol.state_dict()
    sd["w1"] = np.zeros((3, 3), np.float32)
    with pytest.raises(DimensionError):
        pol.load_state_dict(sd)


# -- input gain ------------------------------------------------------------------------------

def test_input_gain_matches_prescaled_input():
    rng = np.random.default_rng(4)
    gain = rng.uniform(0.5, 4.0, size=10)
    x = rng.normal(size=(3, 10))
    scaled = Policy(10, 4, hidden=5, seed=2, dtype=np.float64, input_gain=gain)
    plain = Policy(10, 4, hidden=5, seed=2, dtype=np.float64)
    np.testing.assert_allclose(scaled(x).dist.logits.data, plain(x * gain).dist.logits.data, rtol=1e-12)
    assert len(scaled.parameters()) == len(plain.parameters())


def test_input_gain_travels_with_checkpoint(tmp_path):
    from pairrl.autodiff import load_checkpoint, save_checkpoint
    gain = np.arange(1, 11, dtype=np.float32)
    pol = Policy(10, 3, hidden=4, input_gain=gain)
    save_checkpoint(tmp_path / "p.ckpt", pol.state_dict())
    back = Policy.from_state_dict(load_checkpoint(tmp_path / "p.ckpt"))
    np.testing.assert_array_equal(back.input_gain, gain)
    np.testing.assert_array_equal(back.copy().input_gain, gain)


def test_input_gain_shape_checked():
    with pytest.raises(DimensionError):
        Policy(10, 3, hidden=4, input_gain=np.ones(9))
