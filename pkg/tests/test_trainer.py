from dataclasses import replace

import numpy as np
import pytest

import veil.train
from veil.autodiff import backward, cross_entropy
from veil.config import EarlyStopConfig
from veil.errors import DimensionError, DivergenceError, ProtocolError
from veil.model import accuracy, build_hybrid, build_single_task, set_frozen
from veil.train import (DataSplit, LoopTrace, ScalarLog, TraceRecord, adversarial_phase, finetune_head_frozen_base,
                        holdout_split, identity_cap, identity_refit_phase, multitask_init, phase_seed,
                        run_algorithm1, train_single_task)


def same(a, b):
    return list(a) == list(b) and all(a[name].tobytes() == b[name].tobytes() for name in a)


def permuted_identity(split, seed=5):
    rng = np.random.default_rng(seed)
    train = replace(split.train, identity=rng.permutation(split.train.identity))
    return replace(split, train=train)


def adversarial_ready(model):
    set_frozen(model, 'identity_head', True)
    return model


def refit_ready(model):
    set_frozen(model, 'base', True)
    set_frozen(model, 'emotion_head', True)
    return model


class RecordingWriter(object):

    def __init__(self):
        self.calls = []

    def add_scalars(self, tag, values, step):
        self.calls.append((tag, dict(values), step))


# =============================================================================
# Seeds and splits
# =============================================================================

def test_phase_seeds():
    key = lambda s: tuple(s.generate_state(2))
    assert key(phase_seed(0, 1, 2, 'refit')) == key(phase_seed(0, 1, 2, 'refit'))
    assert key(phase_seed(0, 1, 2, 'refit')) != key(phase_seed(0, 1, 2, 'adversarial'))
    assert key(phase_seed(0, 1, 2, 'refit')) != key(phase_seed(0, 1, 3, 'refit'))
    assert key(phase_seed(0, 1, 0, 'probe:emotion')) != key(phase_seed(0, 1, 0, 'probe:identity'))


def test_holdout_is_group_disjoint(tiny_batch):
    split = holdout_split(tiny_batch, 0.25, seed=3)
    assert not set(split.train.group) & set(split.val.group)
    assert len(split.train) + len(split.val) == len(tiny_batch)
    assert split.eval is split.val


def test_holdout_of_a_single_group(tiny_batch):
    one = tiny_batch.subset(np.flatnonzero(tiny_batch.group == 0))
    split = holdout_split(one, 0.25, seed=0)
    assert split.val is None and split.eval is split.train


def test_scalar_log_steps():
    writer = RecordingWriter()
    log = ScalarLog(writer)
    log.add('a', {'loss': 1.0})
    log.add('a', {'loss': 0.5})
    log.add('b', {'loss': 2.0})
    assert [step for _, _, step in writer.calls] == [0, 1, 0]
    ScalarLog(None).add('a', {'loss': 1.0})


# =============================================================================
# Single-task models and probes
# =============================================================================

def test_zero_learning_rate_changes_nothing(tiny_model_config, tiny_train_config, tiny_batch):
    model = build_single_task(tiny_model_config, 2, rng_seed=1)
    before = model.snapshot()
    history = train_single_task(model, tiny_batch, 'emotion', replace(tiny_train_config, learning_rate=0.0))
    assert len(history) == tiny_train_config.epochs_init
    assert same(before, model.snapshot())


def test_label_range_checked(tiny_model_config, tiny_train_config, tiny_batch):
    model = build_single_task(tiny_model_config, 2)
    with pytest.raises(DimensionError):
        train_single_task(model, tiny_batch, 'identity', tiny_train_config)


def test_verbose_progress(tiny_model_config, tiny_train_config, tiny_batch, capsys):
    model = build_single_task(tiny_model_config, 2)
    train_single_task(model, tiny_batch, 'emotion', replace(tiny_train_config, verbose=True), tag='emotion')
    out = capsys.readouterr().out
    assert "> emotion Epoch 1/2, loss: " in out
    assert "> emotion Epoch 2/2, loss: " in out


def test_training_logs_every_step(tiny_model_config, tiny_train_config, tiny_batch):
    writer = RecordingWriter()
    model = build_single_task(tiny_model_config, 2)
    train_single_task(model, tiny_batch, 'emotion', tiny_train_config, writer=writer, tag='emotion')
    # 24 images in batches of 8
    assert len(writer.calls) == 3 * tiny_train_config.epochs_init
    assert all(tag == 'emotion' for tag, _, _ in writer.calls)


def test_probe_needs_frozen_base(tiny_model_config, tiny_train_config, tiny_batch):
    model = build_single_task(tiny_model_config, 3)
    with pytest.raises(ProtocolError):
        finetune_head_frozen_base(model, tiny_batch, 'identity', tiny_train_config)


def test_probe_leaves_base_unchanged(tiny_model_config, tiny_train_config, tiny_batch):
    model = build_single_task(tiny_model_config, 3, rng_seed=2)
    set_frozen(model, 'base')
    base_before, head_before = model.snapshot(['base']), model.snapshot(['head'])
    finetune_head_frozen_base(model, tiny_batch, 'identity', tiny_train_config)
    assert same(base_before, model.snapshot(['base']))
    assert not same(head_before, model.snapshot(['head']))


def test_constant_base_probes_at_chance(tiny_model_config, tiny_train_config, tiny_batch):
    model = build_single_task(tiny_model_config, 3, rng_seed=2)
    for p in model.base.parameters():
        p.data[...] = 0.0
    set_frozen(model, 'base')
    finetune_head_frozen_base(model, tiny_batch, 'identity', tiny_train_config)
    assert accuracy(model.base, model.head, tiny_batch.x, tiny_batch.identity) == pytest.approx(1.0 / 3)


def test_probes_are_reproducible(tiny_model_config, tiny_train_config, tiny_batch):
    snapshots = []
    for _ in range(2):
        model = build_single_task(tiny_model_config, 2, rng_seed=9)
        set_frozen(model, 'base')
        finetune_head_frozen_base(model, tiny_batch, 'emotion', tiny_train_config, fold=1)
        snapshots.append(model.snapshot())
    assert same(*snapshots)


# =============================================================================
# Hybrid phases
# =============================================================================

def test_multitask_init_trains_every_group(tiny_model_config, tiny_train_config, tiny_split):
    model = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    before = model.snapshot()
    history = multitask_init(model, tiny_split, tiny_train_config)
    after = model.snapshot()
    for group in model.GROUPS:
        assert not same({k: v for k, v in before.items() if k.startswith(group)},
                        {k: v for k, v in after.items() if k.startswith(group)})
    assert set(history[-1]) == {'L_e', 'L_i', 'loss'}


def test_multitask_init_refuses_frozen_groups(tiny_model_config, tiny_train_config, tiny_split):
    model = build_hybrid(tiny_model_config, 2, 3)
    set_frozen(model, 'emotion_head')
    with pytest.raises(ProtocolError):
        multitask_init(model, tiny_split, tiny_train_config)


def test_zero_alpha_ignores_identity(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, alpha=0.0)
    a = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    b = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    identity_before = a.snapshot(['identity_head'])
    multitask_init(a, tiny_split, config)
    multitask_init(b, permuted_identity(tiny_split), config)
    assert same(identity_before, a.snapshot(['identity_head']))
    assert same(a.snapshot(['base']), b.snapshot(['base']))


def test_adversarial_phase_protocol(tiny_model_config, tiny_train_config, tiny_split):
    model = build_hybrid(tiny_model_config, 2, 3)
    with pytest.raises(ProtocolError):
        adversarial_phase(model, tiny_split, tiny_train_config)
    adversarial_ready(model)
    set_frozen(model, 'base')
    with pytest.raises(ProtocolError):
        adversarial_phase(model, tiny_split, tiny_train_config)


def test_adversarial_phase_keeps_identity_head(tiny_model_config, tiny_train_config, tiny_split):
    model = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    identity_before, base_before = model.snapshot(['identity_head']), model.snapshot(['base'])
    history = adversarial_phase(model, tiny_split, tiny_train_config, t=1)
    assert same(identity_before, model.snapshot(['identity_head']))
    assert not same(base_before, model.snapshot(['base']))
    assert len(history) == tiny_train_config.epochs_adv


def test_zero_beta_ignores_identity(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, beta=0.0)
    a = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    b = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    adversarial_phase(a, tiny_split, config, t=1)
    adversarial_phase(b, permuted_identity(tiny_split), config, t=1)
    assert same(a.snapshot(['base']), b.snapshot(['base']))


def test_adversarial_gradient_is_a_difference(tiny_model_config, tiny_batch):
    model = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    batch = tiny_batch.subset(np.arange(6))
    beta = 0.7

    def base_gradient(w_e, w_i):
        model.zero_grad()
        p_e, p_i, _ = model.forward(batch.x)
        loss = cross_entropy(p_e, batch.emotion) * w_e + cross_entropy(p_i, batch.identity) * w_i
        backward(loss)
        return [p.grad.copy() for p in model.base.parameters()]

    combined = base_gradient(1.0, -beta)
    emotion_only = base_gradient(1.0, 0.0)
    identity_only = base_gradient(0.0, 1.0)
    for g, g_e, g_i in zip(combined, emotion_only, identity_only):
        np.testing.assert_allclose(g, g_e - beta * g_i, rtol=0, atol=1e-10)
    # the frozen identity head still receives gradient
    assert model.identity_head.weights[0].grad is not None


def test_identity_cap(tiny_train_config):
    assert identity_cap(tiny_train_config, 3) == pytest.approx(np.log(3))
    assert identity_cap(replace(tiny_train_config, identity_loss_cap=2.0), 4) == pytest.approx(2 * np.log(4))
    assert identity_cap(replace(tiny_train_config, identity_loss_cap=None), 3) is None


def test_confidently_wrong_identity_head_stops_pushing(tiny_model_config, tiny_train_config, tiny_batch):
    # the frozen head favours identity 2 on every input; images of identities 0 and 1
    # already sit above the cap, so the identity term passes no gradient into the base
    split = DataSplit(tiny_batch.subset(np.flatnonzero(tiny_batch.identity != 2)))

    def run(config):
        model = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
        model.identity_head.biases[-1].data[...] = [0.0, 0.0, 8.0]
        adversarial_phase(model, split, config, t=1)
        return model.snapshot(['base', 'emotion_head'])

    capped = run(tiny_train_config)
    assert same(capped, run(replace(tiny_train_config, beta=0.0)))
    assert not same(capped, run(replace(tiny_train_config, identity_loss_cap=None)))


def test_adversarial_phase_reports_plain_identity_loss(tiny_model_config, tiny_train_config, tiny_split):
    model = adversarial_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    model.identity_head.biases[-1].data[...] = [0.0, 0.0, 8.0]
    history = adversarial_phase(model, tiny_split, tiny_train_config, t=1)
    assert history[-1]['L_i'] > np.log(3)
    assert history[-1]['loss'] >= history[-1]['L_e'] - np.log(3) - 1e-9


@pytest.mark.parametrize('phase', ['adversarial', 'refit', 'probe'])
def test_frozen_groups_stay_constant(phase, tiny_model_config, tiny_train_config, tiny_batch):
    rng = np.random.default_rng(17)
    if phase == 'probe':
        model = build_single_task(tiny_model_config, 3, rng_seed=3)
        set_frozen(model, 'base')
        frozen = ['base']
    else:
        model = build_hybrid(tiny_model_config, 2, 3, rng_seed=3)
        frozen = ['identity_head'] if phase == 'adversarial' else ['base', 'emotion_head']
        for group in frozen:
            set_frozen(model, group)
    before = model.snapshot(frozen)

    for step in range(50):
        indices = rng.choice(len(tiny_batch), size=int(rng.integers(2, 9)), replace=False)
        batch = tiny_batch.subset(indices)
        config = replace(tiny_train_config, batch_size=len(indices), epochs_adv=1, epochs_refit=1, epochs_probe=1,
                         learning_rate=float(rng.uniform(0.005, 0.05)),
                         adversarial_learning_rate=float(rng.uniform(0.005, 0.05)), seed=step)
        if phase == 'adversarial':
            adversarial_phase(model, DataSplit(batch), config, t=step)
        elif phase == 'refit':
            identity_refit_phase(model, DataSplit(batch), config, t=step)
        else:
            finetune_head_frozen_base(model, batch, 'identity', config)
        assert same(before, model.snapshot(frozen))


def test_refit_protocol(tiny_model_config, tiny_train_config, tiny_split):
    model = build_hybrid(tiny_model_config, 2, 3)
    with pytest.raises(ProtocolError):
        identity_refit_phase(model, tiny_split, tiny_train_config, t=1)
    refit_ready(model)
    set_frozen(model, 'identity_head')
    with pytest.raises(ProtocolError):
        identity_refit_phase(model, tiny_split, tiny_train_config, t=1)


def test_refit_touches_only_the_identity_head(tiny_model_config, tiny_train_config, tiny_split):
    model = refit_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    frozen_before = model.snapshot(['base', 'emotion_head'])
    acc = identity_refit_phase(model, tiny_split, tiny_train_config, t=1)
    assert 0.0 <= acc <= 1.0
    assert same(frozen_before, model.snapshot(['base', 'emotion_head']))


def test_fresh_refit_restarts_the_head(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, learning_rate=0.0)
    a = refit_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    b = refit_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=1))
    identity_refit_phase(a, tiny_split, config, t=4)
    identity_refit_phase(b, tiny_split, config, t=4)
    assert same(a.snapshot(['identity_head']), b.snapshot(['identity_head']))

    warm = refit_ready(build_hybrid(tiny_model_config, 2, 3, rng_seed=0))
    before = warm.snapshot(['identity_head'])
    identity_refit_phase(warm, tiny_split, replace(config, reinit_policy='warm'), t=4)
    assert same(before, warm.snapshot(['identity_head']))


# =============================================================================
# Outer loop
# =============================================================================

def test_zero_iterations_is_multitask_only(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, T=0)
    looped = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    plain = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    base, trace = run_algorithm1(looped, tiny_split, config)
    multitask_init(plain, tiny_split, config)
    assert len(trace) == 0
    assert base is looped.base and looped.frozen['base']
    assert same(looped.snapshot(), plain.snapshot())


def test_trace(tiny_model_config, tiny_train_config, tiny_split, tmp_path):
    model = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
    _, trace = run_algorithm1(model, tiny_split, tiny_train_config)
    assert trace.column('t') == [1, 2]
    assert not trace.early_stopped
    for record in trace.records:
        assert 0.0 <= record.acc_i_refit_val <= 1.0 and 0.0 <= record.acc_e_val <= 1.0
        assert np.isfinite(record.L_e) and np.isfinite(record.L_i)

    trace.to_csv(str(tmp_path / 'trace.csv'))
    assert LoopTrace.from_csv(str(tmp_path / 'trace.csv')).records == trace.records
    with open(tmp_path / 'trace.csv') as f:
        assert f.readline().strip() == 't,L_e,L_i,acc_e_val,acc_i_refit_val,acc_e_train,acc_i_refit_train,early_stop'


def test_trace_iterations_increase():
    trace = LoopTrace()
    trace.append(TraceRecord(2, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(2, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5))


def test_loop_is_reproducible(tiny_model_config, tiny_train_config, tiny_split):
    runs = []
    for _ in range(2):
        model = build_hybrid(tiny_model_config, 2, 3, rng_seed=0)
        runs.append((run_algorithm1(model, tiny_split, tiny_train_config)[1], model.snapshot()))
    assert runs[0][0].records == runs[1][0].records
    assert same(runs[0][1], runs[1][1])


def test_early_stop(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, T=5, early_stop=EarlyStopConfig(patience=1, epsilon=1.0))
    _, trace = run_algorithm1(build_hybrid(tiny_model_config, 2, 3), tiny_split, config)
    assert len(trace) == 1 and trace.early_stopped


def test_divergence_keeps_partial_trace(tiny_model_config, tiny_train_config, tiny_split, monkeypatch):
    original = veil.train.adversarial_phase

    def diverging(model, split, config, fold=0, t=0, *args, **kwargs):
        if t == 2:
            raise DivergenceError("hybrid/adversarial: loss nan exceeds the divergence limit")
        return original(model, split, config, fold, t, *args, **kwargs)

    monkeypatch.setattr(veil.train, 'adversarial_phase', diverging)
    with pytest.raises(DivergenceError) as info:
        run_algorithm1(build_hybrid(tiny_model_config, 2, 3), tiny_split, tiny_train_config)
    assert info.value.trace.column('t') == [1]


def test_divergence_limit(tiny_model_config, tiny_train_config, tiny_split):
    config = replace(tiny_train_config, divergence_limit=1e-6)
    with pytest.raises(DivergenceError) as info:
        run_algorithm1(build_hybrid(tiny_model_config, 2, 3), tiny_split, config)
    # the multi-task warm start already diverges, before any outer iteration
    assert info.value.trace is not None and len(info.value.trace) == 0
