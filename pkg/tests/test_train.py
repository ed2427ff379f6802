import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtab import autodiff as ad
from fairtab.autodiff import DimensionError, Node
from fairtab.nets import CriticParams, Dense, critic_forward, generator_forward, init_params
from fairtab.tabular import TableSchema, fit
from fairtab.train import (
    ConfigError,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    TrainLog,
    critic_loss,
    fairness_term,
    generate,
    generator_loss_phase1,
    generator_loss_phase2,
    gradient_penalty,
    interpolate,
    train,
)

from oracles import counting_fairness, toy_biased_table


@pytest.fixture(scope="module")
def toy():
    t = toy_biased_table(400, seed=3)
    return t, TableSchema.infer(t, protected="s", underprivileged="under", label="y", favorable="yes")


def zero_critic(width):
    def dense(i, o):
        return Dense(ad.parameter(np.zeros((i, o))), ad.parameter(np.zeros(o)))

    return CriticParams(dense(width, width), dense(width, width), dense(width, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_zero_critic_loss_is_exactly_lambda_p(m, width, seed):
    rng = np.random.default_rng(seed)
    loss = critic_loss(rng.random((m, width)), rng.random((m, width)), zero_critic(width), rng)
    assert float(loss.value) == 10.0


def test_constant_nonzero_critic_loss_is_lambda_p():
    critic = zero_critic(3)
    critic.head.bias.value = np.array([2.5])
    rng = np.random.default_rng(0)
    assert float(critic_loss(rng.random((4, 3)), rng.random((4, 3)), critic, rng).value) == 10.0


def test_interpolation_endpoint():
    real, fake = np.arange(6.0).reshape(3, 2), -np.ones((3, 2))
    np.testing.assert_array_equal(interpolate(real, fake, np.ones(3)), real)
    np.testing.assert_array_equal(interpolate(real, fake, np.zeros(3)), fake)


def identity_linear_critic(w):
    eye = np.eye(len(w))
    return CriticParams(
        Dense(ad.parameter(eye.copy()), ad.parameter(np.zeros(len(w)))),
        Dense(ad.parameter(eye.copy()), ad.parameter(np.zeros(len(w)))),
        Dense(ad.parameter(np.array(w, dtype=float).reshape(-1, 1)), ad.parameter(np.zeros(1))),
    )


def test_linear_critic_penalty_is_16():
    # on the positive orthant both leaky layers are the identity, so C(x) = 3 x1 + 4 x2
    critic = identity_linear_critic([3.0, 4.0])
    points = np.random.default_rng(0).random((5, 2)) + 0.1
    gp = gradient_penalty(critic, points)
    assert float(gp.value) == pytest.approx(16.0)
    (gw,) = ad.grad(gp, [critic.head.weight])
    np.testing.assert_allclose(gw.value.ravel(), [4.8, 6.4])


def test_critic_loss_batch_mismatch():
    with pytest.raises(DimensionError):
        critic_loss(np.zeros((3, 2)), np.zeros((4, 2)), zero_critic(2), np.random.default_rng(0))


def test_critic_loss_explicit_eps_reproducible():
    rng = np.random.default_rng(0)
    critic = identity_linear_critic([1.0, -2.0])
    real, fake = rng.random((4, 2)), rng.random((4, 2))
    eps = rng.random((4, 1))
    a = critic_loss(real, fake, critic, eps=eps).value
    b = critic_loss(real, fake, critic, eps=eps).value
    expected = (fake @ [1.0, -2.0]).mean() - (real @ [1.0, -2.0]).mean() + 10 * (np.sqrt(5) - 1) ** 2
    assert a == b
    assert float(a) == pytest.approx(expected)


def test_generator_phase1_loss():
    assert float(generator_loss_phase1(Node(np.array([[1.0], [3.0]]))).value) == -2.0
    assert float(generator_loss_phase1(Node(np.full((4, 1), 1.5))).value) == -1.5


def test_generator_phase2_arithmetic():
    scores = Node(np.array([[1.0], [3.0]]))
    loss = generator_loss_phase2(scores, Node(np.array(-0.5)), 2.0)
    assert float(loss.value) == -2.0 + 1.0
    assert float(generator_loss_phase2(scores, Node(np.array(0.3)), 0.0).value) == float(
        generator_loss_phase1(scores).value
    )


def sy_transformer():
    t = pd.DataFrame({"s": ["u", "u", "p", "p"], "y": ["no", "yes", "yes", "yes"]})
    schema = TableSchema.infer(t, protected="s", underprivileged="u", label="y", favorable="yes")
    return t, fit(t, schema)


def test_fairness_counting_example():
    t, fitted = sy_transformer()
    assert float(fairness_term(Node(fitted.encode(t)), fitted).value) == pytest.approx(0.5 - 1.0)


def test_fairness_independent_batch_is_zero():
    t = pd.DataFrame({"s": ["u", "u", "p", "p"], "y": ["no", "yes", "yes", "no"]})
    _, fitted = sy_transformer()
    assert float(fairness_term(Node(fitted.encode(t)), fitted).value) == pytest.approx(0.0)


def test_fairness_all_privileged_batch_is_guarded():
    t = pd.DataFrame({"s": ["p", "p", "p"], "y": ["no", "yes", "yes"]})
    _, fitted = sy_transformer()
    value = float(fairness_term(Node(fitted.encode(t)), fitted).value)
    assert value == pytest.approx(0.0 - 2 / 3)


def test_fairness_needs_designations():
    t = pd.DataFrame({"s": ["a", "b"]})
    fitted = fit(t, TableSchema.infer(t))
    with pytest.raises(ConfigError):
        fairness_term(Node(fitted.encode(t)), fitted)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_fairness_matches_counting_oracle(rows):
    _, fitted = sy_transformer()
    t = pd.DataFrame({"s": ["u" if u else "p" for u, _ in rows], "y": ["yes" if f else "no" for _, f in rows]})
    got = float(fairness_term(Node(fitted.encode(t)), fitted).value)
    want = counting_fairness([u for u, _ in rows], [f for _, f in rows])
    assert got == pytest.approx(want, abs=1e-6)


def test_fairness_gradient_is_finite_on_soft_batches():
    _, fitted = sy_transformer()
    x = ad.parameter(np.random.default_rng(0).dirichlet([1, 1, 1, 1], size=6))
    (g,) = ad.grad(fairness_term(x, fitted), [x])
    assert np.all(np.isfinite(g.value))


def test_one_fair_step_lowers_batch_ds(toy):
    table, schema = toy
    tr = Trainer(table, schema, TrainConfig(t1=0, t2=0, lambda_f=1.0, alpha=1e-3, seed=0))
    tr.run_phase("I", 3)
    rng_state = np.random.default_rng(11)
    z = rng_state.standard_normal((256, tr.fitted.width))

    def batch_ds():
        out = generator_forward(z, tr.generator, np.random.default_rng(12), "soft")
        return -float(fairness_term(out, tr.fitted).value)

    before = batch_ds()
    out = generator_forward(z, tr.generator, np.random.default_rng(12), "soft")
    loss = generator_loss_phase2(critic_forward(out, tr.critic), fairness_term(out, tr.fitted), 1.0)
    tr.gen_opt.step(ad.grad(loss, tr.gen_opt.params))
    assert batch_ds() < before


def test_config_validation():
    for bad in (dict(t1=-1), dict(n_crit=0), dict(batch_size=1), dict(lambda_f=-0.1), dict(lambda_p=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_no_epochs_returns_initial_parameters(toy):
    table, schema = toy
    gen, critic, fitted, log = train(table, schema, TrainConfig(t1=0, t2=0, seed=4))
    gen0, critic0 = init_params(fitted, np.random.default_rng(4))
    assert len(log) == 0
    for (_, a), (_, b) in zip(gen.layers() + critic.layers(), gen0.layers() + critic0.layers()):
        np.testing.assert_array_equal(a.weight.value, b.weight.value)


def test_log_length_phase_tags_and_update_counts(toy):
    table, schema = toy
    tr = Trainer(table, schema, TrainConfig(t1=2, t2=1, batch_size=128, seed=0)).fit()
    assert [r.phase for r in tr.log.records] == ["I", "I", "II"]
    assert [r.epoch for r in tr.log.records] == [0, 1, 2]
    batches = -(-len(table) // 128)  # the short last batch is kept
    assert tr.gen_opt.state.step_count == 3 * batches
    assert tr.critic_opt.state.step_count == 4 * 3 * batches
    assert all(r.gp >= 0 for r in tr.log.records)


def test_freeze_discipline(toy):
    table, schema = toy
    tr = Trainer(table, schema, TrainConfig(seed=0))
    real = tr.data[:64]
    gen_before = [p.value.copy() for p in tr.generator.parameters()]
    tr._critic_step(real)
    assert all(np.array_equal(a, p.value) for a, p in zip(gen_before, tr.generator.parameters()))
    critic_before = [p.value.copy() for p in tr.critic.parameters()]
    tr._generator_step(64, "II")
    assert all(np.array_equal(a, p.value) for a, p in zip(critic_before, tr.critic.parameters()))
    assert not all(np.array_equal(a, p.value) for a, p in zip(gen_before, tr.generator.parameters()))


def test_lambda_zero_phase2_equals_phase1(toy):
    table, schema = toy
    base = Trainer(table, schema, TrainConfig(lambda_f=0.0, seed=2))
    base.run_phase("I", 1)
    a, b = base.clone(), base.clone()
    a.run_phase("I", 2)
    b.run_phase("II", 2)
    fa, fb = a.log.to_frame().drop(columns="phase"), b.log.to_frame().drop(columns="phase")
    pd.testing.assert_frame_equal(fa, fb, check_exact=True)
    for p, q in zip(a.generator.parameters(), b.generator.parameters()):
        np.testing.assert_array_equal(p.value, q.value)


def test_clone_continuation_is_identical_to_straight_run(toy):
    table, schema = toy
    straight = Trainer(table, schema, TrainConfig(t1=2, t2=1, lambda_f=0.7, seed=5)).fit()
    forked = Trainer(table, schema, TrainConfig(t1=2, t2=1, lambda_f=0.1, seed=5))
    forked.run_phase("I", 2)
    forked = forked.clone()
    forked.config.lambda_f = 0.7
    forked.run_phase("II", 1)
    pd.testing.assert_frame_equal(straight.log.to_frame(), forked.log.to_frame(), check_exact=True)


def test_same_seed_same_log(toy):
    table, schema = toy
    a = train(table, schema, TrainConfig(t1=1, t2=1, seed=8))[3]
    b = train(table, schema, TrainConfig(t1=1, t2=1, seed=8))[3]
    pd.testing.assert_frame_equal(a.to_frame(), b.to_frame(), check_exact=True)


def test_trainlog_csv_round_trip(toy, tmp_path):
    table, schema = toy
    log = train(table, schema, TrainConfig(t1=1, t2=1, seed=1))[3]
    log.to_csv(tmp_path / "log.csv")
    back = TrainLog.from_csv(tmp_path / "log.csv")
    pd.testing.assert_frame_equal(back.to_frame(), log.to_frame(), check_exact=True)
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,phase,critic_loss,gen_loss,gp,batch_ds"


def test_divergence_guard(toy):
    table, schema = toy
    tr = Trainer(table, schema, TrainConfig(seed=0))
    tr.critic.head.weight.value = np.full_like(tr.critic.head.weight.value, np.nan)
    with pytest.raises(TrainingDiverged):
        tr.run_epoch("I")


def test_generate_contract(toy):
    table, schema = toy
    gen, _, fitted, _ = train(table, schema, TrainConfig(t1=1, t2=0, seed=0))
    a = generate(gen, fitted, 300, seed=3)
    b = generate(gen, fitted, 300, seed=3)
    pd.testing.assert_frame_equal(a, b)
    assert list(a.columns) == list(table.columns)
    assert len(a) == 300
    assert a["x"].between(table["x"].min(), table["x"].max()).all()
    assert set(a["s"]) <= set(table["s"]) and set(a["y"]) <= set(table["y"])
    pd.testing.assert_frame_equal(generate(gen, fitted, 50, seed=3, mode="hard"), generate(gen, fitted, 50, seed=3, mode="hard"))


def ks_statistic(a, b):
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(np.sort(a), grid, side="right") / len(a)
    fb = np.searchsorted(np.sort(b), grid, side="right") / len(b)
    return float(np.abs(fa - fb).max())


def test_two_column_toy_marginal_ks():
    rng = np.random.default_rng(0)
    n = 800
    kind = rng.choice(["a", "b"], n, p=[0.4, 0.6])
    x = np.where(kind == "a", rng.normal(-2, 0.5, n), rng.normal(1.5, 1.0, n))
    table = pd.DataFrame({"x": x, "k": kind})
    holdout = np.where(rng.random(2000) < 0.4, rng.normal(-2, 0.5, 2000), rng.normal(1.5, 1.0, 2000))
    schema = TableSchema.infer(table)
    gen, _, fitted, _ = train(table, schema, TrainConfig(t1=200, t2=0, seed=0))
    synthetic = generate(gen, fitted, 2000, seed=1)
    assert ks_statistic(synthetic["x"].to_numpy(), holdout) < 0.15
