import numpy as np
import pytest

from asediff import (Architecture, ConfigurationError, Dataset, MismatchError, NetworkConfig,
                     TrainConfig, Trainer, TrainingError, ema_update, finetune_ase,
                     gaussian_oracle_eps, init_network, lambda_schedule, linear_beta_schedule,
                     make_named_schedule, plateau_check, pretrain)
from asediff.training import AdamW, TrainState

T = 1000
SMALL = NetworkConfig("stack", 3, width=8)
RING = Dataset("gmm_ring")


def _params_equal(a, b):
    return all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def _state(ema_rate, teacher_val, student_val):
    cfg = NetworkConfig("stack", 1, width=4)
    s = init_network(cfg, 0)
    t = s.copy()
    for k in s.params:
        s.params[k][...] = student_val
        t.params[k][...] = teacher_val
    return TrainState(s, t, AdamW(s.params, 1e-3), ema_rate=ema_rate)


# -- pretraining --------------------------------------------------------------------

def test_pretrain_deterministic():
    a = pretrain(SMALL, RING, 30, seed=3)
    b = pretrain(SMALL, RING, 30, seed=3)
    assert _params_equal(a, b)
    assert not _params_equal(a, pretrain(SMALL, RING, 30, seed=4))


def test_pretrain_zero_iterations_is_init():
    assert _params_equal(pretrain(SMALL, RING, 0, seed=5), init_network(SMALL, 5))


def test_pretrain_rejects_wrong_dimension():
    with pytest.raises(ConfigurationError):
        pretrain(SMALL, Dataset("gaussian", dim=3), 1, seed=0)


def test_pretrain_learns_gaussian_oracle():
    ns = linear_beta_schedule(T)
    data = Dataset("gaussian", dim=1, params={"mean": [1.0], "std": 0.5})
    cfg = NetworkConfig("stack", 2, width=16, in_dim=1)
    net = pretrain(cfg, data, 2000, seed=0, train_cfg=TrainConfig(lr=2e-3, lr_schedule="cosine"))
    rng = np.random.default_rng(7)
    x0 = data.sample(4000, rng)
    t = rng.integers(1, T + 1, 4000)
    x_t = np.sqrt(ns.alpha_bar_at(t))[:, None] * x0 + np.sqrt(
        1 - ns.alpha_bar_at(t))[:, None] * rng.standard_normal(x0.shape)
    target = gaussian_oracle_eps(x_t, t, [1.0], 0.5, ns)
    untrained = np.mean((init_network(cfg, 0).predict(x_t, t) - target) ** 2)
    trained = np.mean((net.predict(x_t, t) - target) ** 2)
    assert trained * 10 <= untrained, (trained, untrained)


def test_divergence_raises_training_error():
    net = init_network(SMALL, 0)
    net.params["head.b"][:] = np.nan
    tr = Trainer(net, RING, linear_beta_schedule(T), TrainConfig(), 0, use_ema=False)
    with pytest.raises(TrainingError) as err:
        tr.step()
    assert err.value.step == 0


# -- EMA --------------------------------------------------------------------------

def test_ema_edges():
    st = _state(1.0, 1.0, 0.0)
    ema_update(st)
    assert all(np.all(v == 1.0) for v in st.teacher.params.values())
    st = _state(0.0, 1.0, 0.3)
    ema_update(st)
    assert all(np.all(v == 0.3) for v in st.teacher.params.values())
    st = _state(0.999, 1.0, 0.0)
    ema_update(st)
    for v in st.teacher.params.values():
        np.testing.assert_allclose(v, 0.999, rtol=0, atol=1e-15)


def test_ema_contraction(rng):
    st = _state(0.9, 0.0, 0.0)
    for k in st.student.params:
        st.student.params[k][...] = rng.standard_normal(st.student.params[k].shape)
        st.teacher.params[k][...] = rng.standard_normal(st.teacher.params[k].shape)
    before = {k: np.abs(st.teacher.params[k] - st.student.params[k]) for k in st.teacher.params}
    ema_update(st)
    for k, b in before.items():
        after = np.abs(st.teacher.params[k] - st.student.params[k])
        assert np.all(after <= 0.9 * b + 1e-15)


def test_ema_rate_validated():
    with pytest.raises(ConfigurationError):
        TrainConfig(ema_rate=1.5)
    with pytest.raises(ConfigurationError):
        TrainConfig(lambda_boost=0.5)


# -- lambda reweighting -----------------------------------------------------------

def test_lambda_schedule():
    st = _state(0.999, 0.0, 0.0)
    st.cycle_C, st.lambda_boost, st.noise_region_start = 10, 2.0, 0.5
    st.step = 3
    assert lambda_schedule(900, st, T) == 2.0
    assert lambda_schedule(500, st, T) == 1.0
    assert lambda_schedule(501, st, T) == 2.0
    st.step = 10
    assert np.all(lambda_schedule(np.arange(1, T + 1), st, T) == 1.0)
    st.step, st.boost_active = 0, False
    assert lambda_schedule(900, st, T) == 1.0


def test_boosted_loss_adds_noise_region_sum(rng):
    net = init_network(SMALL, 0)
    for k in net.params:
        net.params[k] += 0.1 * rng.standard_normal(net.params[k].shape)
    tr = Trainer(net, RING, linear_beta_schedule(T), TrainConfig(), 0)
    x0 = RING.sample(64, rng)
    t = rng.integers(1, T + 1, 64)
    eps = rng.standard_normal(x0.shape)
    st = tr.state
    w2 = lambda_schedule(t, st, T)
    loss2 = tr.batch_loss_and_grads(net, x0, t, eps, w2)[0]
    loss1 = tr.batch_loss_and_grads(net, x0, t, eps, np.ones(64))[0]
    # recompute the per-example squared errors by hand
    ab = linear_beta_schedule(T).alpha_bar_at(t)[:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    per = np.sum((net.predict(x_t, t) - eps) ** 2, axis=1)
    noise_sum = per[t / T > 0.5].sum() / 64
    assert loss2 == pytest.approx(loss1 + noise_sum, rel=1e-12)
    assert loss2 >= loss1


def test_boost_phase_logged():
    tr = Trainer(init_network(SMALL, 0), RING, linear_beta_schedule(T),
                 TrainConfig(batch_size=16, cycle_C=4, log_every=2), 0)
    tr.run(8)
    assert [r["lambda_phase"] for r in tr.history] == ["boost", "boost", "uniform", "uniform"]


# -- plateau ------------------------------------------------------------------------

def test_plateau_check_cases():
    assert not plateau_check(np.linspace(2.0, 1.0, 20), 5)
    assert plateau_check([1.0] * 6, 5)
    assert not plateau_check([1.0] * 5, 5)
    assert not plateau_check([1.0, 1.0, 1.0], 5, window=4)


def test_plateau_on_noisy_flat_history():
    # noise below the relative tolerance: flat within P + 2 evaluations
    for seed in range(20):
        h = 1.0 + 2e-4 * np.random.default_rng(seed).standard_normal(7)
        assert plateau_check(h[:6], 5) or plateau_check(h, 5)
    # noise above the tolerance: the running minimum stalls soon enough
    for seed in range(20):
        h = 1.0 + 1e-2 * np.random.default_rng(seed).standard_normal(60)
        assert any(plateau_check(h[:n], 5) for n in range(6, 61))


def test_plateau_resets_lambda():
    cfg = TrainConfig(batch_size=16, lr=0.0, cycle_C=10_000, plateau_patience=2,
                      plateau_eval_every=1)
    tr = Trainer(init_network(SMALL, 0), RING, linear_beta_schedule(T), cfg, 0)
    tr.run(3)   # zero learning rate: validation loss is constant
    assert not tr.state.boost_active
    assert np.all(lambda_schedule([999], tr.state, T) == 1.0)


# -- fine-tuning ----------------------------------------------------------------------

def _pre():
    return pretrain(SMALL, RING, 50, seed=0, train_cfg=TrainConfig(lr=1e-3, batch_size=64))


def test_finetune_frozen_teacher():
    pre = _pre()
    sched = make_named_schedule("noise_easy", Architecture.stack(3))
    out = finetune_ase(pre, sched, RING, TrainConfig(ema_rate=1.0, batch_size=32, lr=1e-2), 20, 1)
    assert _params_equal(out, pre)


def test_finetune_zero_iterations():
    pre = _pre()
    out = finetune_ase(pre, make_named_schedule("noise_easy", Architecture.stack(3)), RING,
                       TrainConfig(), 0, 1)
    assert _params_equal(out, pre)
    assert out is not pre


def test_finetune_deterministic_and_moves():
    pre = _pre()
    sched = make_named_schedule("data_easy", Architecture.stack(3))
    cfg = TrainConfig(batch_size=32, lr=1e-3, ema_rate=0.9)
    a = finetune_ase(pre, sched, RING, cfg, 15, 2)
    b = finetune_ase(pre, sched, RING, cfg, 15, 2)
    assert _params_equal(a, b)
    assert not _params_equal(a, pre)


def test_finetune_schedule_mismatch():
    with pytest.raises(MismatchError):
        finetune_ase(_pre(), make_named_schedule("noise_easy", Architecture.stack(5)), RING,
                     TrainConfig(), 1, 0)


def test_unreached_blocks_untouched():
    net = init_network(NetworkConfig("stack", 5, width=8), 0)
    rng = np.random.default_rng(0)
    for k in net.params:
        net.params[k] += 0.1 * rng.standard_normal(net.params[k].shape)
    sched = make_named_schedule("ablation", Architecture.stack(5), row=(3, 2) * 5)
    out = finetune_ase(net, sched, RING, TrainConfig(batch_size=32, lr=1e-2, ema_rate=0.5), 10, 0)
    for k in net.params:
        same = out.params[k].tobytes() == net.params[k].tobytes()
        assert same == k.startswith(("blocks.3.", "blocks.4.")), k


def test_hybrid_loss_trains_variance():
    cfg = NetworkConfig("stack", 2, width=8, learned_variance=True)
    tc = TrainConfig(batch_size=32, lr=1e-2, vlb_weight=1e-3)
    pre = pretrain(cfg, RING, 20, seed=0, train_cfg=tc)
    assert np.any(pre.params["head.w"][:, 2:] != 0)
    no_vlb = pretrain(cfg, RING, 20, seed=0, train_cfg=TrainConfig(batch_size=32, lr=1e-2))
    assert np.all(no_vlb.params["head.w"][:, 2:] == 0)


def test_t_range_restricts_sampling():
    tr = Trainer(init_network(SMALL, 0), RING, linear_beta_schedule(T),
                 TrainConfig(t_range=(0.3, 0.4)), 0)
    t = tr._sample_t(5000)
    assert t.min() == 301 and t.max() == 400
