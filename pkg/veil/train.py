"""
Veil
Training.

    train_single_task           Emotion / Face model: base and head trained end to end
    finetune_head_frozen_base   fresh head on a frozen base (Emotion2Face, Hybrid2Emotion, Hybrid2Face)
    multitask_init              L_e + alpha * L_i over base, emotion head and identity head
    adversarial_phase           L_e - beta * L_i over base and emotion head, identity head frozen
    identity_refit_phase        identity head alone on the frozen base
    run_algorithm1              multitask_init, then T x {adversarial_phase, identity_refit_phase}

Every procedure trains in place and returns its loss history. Progress is printed
with the "> " prefix when TrainConfig.verbose is set, and scalar curves go to a
tensorboard SummaryWriter when one is supplied:
    tensorboard --logdir=runs

Licensed under the MIT License (see LICENSE for details)
"""

import csv
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from .autodiff import OptimizerState, backward, cross_entropy, no_grad, sgd_step
from .datasets.folds import deal_groups
from .datasets.synthetic import ImageBatch
from .errors import DatasetError, DimensionError, DivergenceError, ProtocolError
from .model import extract_features, head_accuracy, reinit_head, set_frozen

# decorrelated seed stream per procedure: SeedSequence([seed, fold, t, phase])
PHASES = {
    'holdout': 0,
    'single': 1,
    'init': 2,
    'adversarial': 3,
    'refit': 4,
    'refit_head': 5,
    'probe': 6,
    'probe_head': 7,
    'model': 8,
}

TRACE_COLUMNS = ['t', 'L_e', 'L_i', 'acc_e_val', 'acc_i_refit_val',
                 'acc_e_train', 'acc_i_refit_train', 'early_stop']


def phase_seed(seed, fold, t, phase):
    """Seed of one procedure of one fold; `phase` is a key of PHASES, optionally
    suffixed (e.g. 'probe_head:identity') to split a stream further.
    """
    name, _, suffix = phase.partition(':')
    entropy = [int(seed), int(fold), int(t), PHASES[name]]
    if suffix:
        entropy.append(sum(ord(c) * 31 ** i for i, c in enumerate(suffix)) % (2 ** 32))
    return np.random.SeedSequence(entropy)


@dataclass
class DataSplit:
    """Training batch and the group-disjoint validation batch carved out of it.
    """
    train: ImageBatch
    val: Optional[ImageBatch] = None

    @property
    def eval(self):
        return self.val if self.val is not None else self.train


def holdout_split(batch, fraction, seed):
    """Hold out about `fraction` of the groups of `batch` for validation, stratified
    like the outer folds. Batches with a single group get no validation set.
    """
    num_groups = len(np.unique(batch.group))
    if num_groups < 2:
        return DataSplit(batch, None)
    k = min(num_groups, max(2, int(round(1.0 / fraction))))
    plan = deal_groups(batch.group, batch.identity, batch.emotion, k, seed)
    train, val = plan.split(batch.group, 0)
    return DataSplit(batch.subset(train), batch.subset(val))


class ScalarLog(object):
    """SummaryWriter wrapper keeping one global step per tag.
    """
    def __init__(self, writer=None):
        self.writer = writer
        self.steps = {}

    def add(self, tag, values):
        if self.writer is None:
            return
        step = self.steps.get(tag, 0)
        self.writer.add_scalars(tag, values, step)
        self.steps[tag] = step + 1


def _as_log(writer):
    return writer if isinstance(writer, ScalarLog) else ScalarLog(writer)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_labels(labels, num_classes, where):
    if len(labels) == 0:
        raise DatasetError("{}: empty training split".format(where))
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DimensionError("{}: labels span [{}, {}] but the head has {} classes".format(
            where, labels.min(), labels.max(), num_classes))


def _check_divergence(value, config, where):
    if not math.isfinite(value) or abs(value) > config.divergence_limit:
        raise DivergenceError("{}: loss {} exceeds the divergence limit {}".format(
            where, value, config.divergence_limit))


def identity_cap(config, num_identities):
    """Per-sample ceiling of the adversarial identity loss, None when unbounded.
    """
    if config.identity_loss_cap is None:
        return None
    return config.identity_loss_cap * math.log(num_identities)


def _run_epochs(step, n, epochs, config, rng, tag, log):
    """Mini-batch loop shared by every procedure.
    Args:
        step [callable]: indices -> dict of batch losses; applies one SGD update
    Returns:
        list of per-epoch mean losses
    """
    history = []
    for epoch in range(epochs):
        sums, batches = {}, 0
        for indices in _minibatches(n, config.batch_size, rng):
            losses = step(indices)
            log.add(tag, losses)
            for key, value in losses.items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
        means = {key: value / batches for key, value in sums.items()}
        history.append(means)
        if config.verbose:
            print("> {} Epoch {}/{}".format(tag, epoch + 1, epochs), end=', ', flush=True)
            print(", ".join("{}: {:.4f}".format(key, value) for key, value in means.items()))
    return history


def _train_head(head, features, labels, config, epochs, rng, state, tag, log):
    """Head-only training on cached base features.
    """
    params = head.parameters()

    def step(indices):
        for p in params:
            p.zero_grad()
        loss = cross_entropy(head(features[indices]), labels[indices])
        _check_divergence(loss.item(), config, tag)
        backward(loss)
        sgd_step(params, state)
        return {'loss': loss.item()}

    return _run_epochs(step, len(labels), epochs, config, rng, tag, log)


def train_single_task(model, batch, task, config, fold=0, writer=None, tag='single'):
    """Train base and head jointly on one task's cross-entropy for epochs_init epochs.
    Args:
        model [SingleTaskModel]
        batch [ImageBatch]: training images
        task [str]: 'emotion' gives the Emotion model, 'identity' the Face model
    Returns:
        per-epoch mean losses
    """
    labels = batch.labels(task)
    _check_labels(labels, model.head.num_classes, tag)
    state = OptimizerState(config.learning_rate, config.momentum)
    rng = np.random.default_rng(phase_seed(config.seed, fold, 0, 'single'))

    def step(indices):
        model.zero_grad()
        loss = cross_entropy(model.forward(batch.x[indices]), labels[indices])
        _check_divergence(loss.item(), config, tag)
        backward(loss)
        sgd_step(model.trainable_parameters(), state)
        return {'loss': loss.item()}

    return _run_epochs(step, len(batch), config.epochs_init, config, rng, tag, _as_log(writer))


def finetune_head_frozen_base(model, batch, task, config, fold=0, writer=None, tag='probe', features=None):
    """Train only the head of `model` on a frozen base for epochs_probe epochs.
    Two calls with the same (config.seed, fold, task) see the same mini-batch order,
    so probes on different bases differ only by the base.
    Args:
        model [SingleTaskModel]: base must be frozen
        features [N x F]: optional cached base output for `batch`
    """
    if not model.frozen['base']:
        raise ProtocolError("{}: probe heads are fine-tuned on a frozen base; freeze 'base' first".format(tag))
    labels = batch.labels(task)
    _check_labels(labels, model.head.num_classes, tag)
    if features is None:
        features = extract_features(model.base, batch.x)
    state = OptimizerState(config.learning_rate, config.momentum)
    rng = np.random.default_rng(phase_seed(config.seed, fold, 0, 'probe:' + task))
    return _train_head(model.head, features, labels, config, config.epochs_probe, rng, state, tag, _as_log(writer))


def multitask_init(model, split, config, fold=0, writer=None, tag='hybrid/init'):
    """Warm start minimizing L_e + alpha * L_i over all three parameter groups.
    """
    frozen = [g for g in model.GROUPS if model.frozen[g]]
    if frozen:
        raise ProtocolError("{}: multi-task initialization trains every group, but {} frozen".format(
            tag, ', '.join(frozen)))
    batch = split.train
    _check_labels(batch.emotion, model.emotion_head.num_classes, tag)
    _check_labels(batch.identity, model.identity_head.num_classes, tag)
    state = OptimizerState(config.learning_rate, config.momentum)
    rng = np.random.default_rng(phase_seed(config.seed, fold, 0, 'init'))

    def step(indices):
        model.zero_grad()
        p_e, p_i, _ = model.forward(batch.x[indices])
        loss_e = cross_entropy(p_e, batch.emotion[indices])
        loss_i = cross_entropy(p_i, batch.identity[indices])
        loss = loss_e + loss_i * config.alpha
        _check_divergence(loss.item(), config, tag)
        backward(loss)
        sgd_step(model.trainable_parameters(), state)
        return {'L_e': loss_e.item(), 'L_i': loss_i.item(), 'loss': loss.item()}

    return _run_epochs(step, len(batch), config.epochs_init, config, rng, tag, _as_log(writer))


def adversarial_phase(model, split, config, fold=0, t=0, writer=None, state=None, tag='hybrid/adversarial'):
    """Minimize L_e - beta * L_i over base and emotion head for epochs_adv epochs.
    The frozen identity head still passes gradient into the base. With
    identity_loss_cap set, each sample's L_i stops counting once it reaches
    cap * log(K_i), so the base gains nothing from making the head confidently wrong.
    Args:
        state [OptimizerState]: defaults to a fresh one at the adversarial rate and momentum
    """
    if not model.frozen['identity_head']:
        raise ProtocolError("{}: the identity head must be frozen during the adversarial phase".format(tag))
    if model.frozen['base'] or model.frozen['emotion_head']:
        raise ProtocolError("{}: base and emotion head must be trainable during the adversarial phase".format(tag))
    batch = split.train
    if state is None:
        state = OptimizerState(config.adversarial_learning_rate, config.adversarial_momentum)
    cap = identity_cap(config, model.identity_head.num_classes)
    rng = np.random.default_rng(phase_seed(config.seed, fold, t, 'adversarial'))

    def step(indices):
        model.zero_grad()
        p_e, p_i, _ = model.forward(batch.x[indices])
        loss_e = cross_entropy(p_e, batch.emotion[indices])
        loss_i = cross_entropy(p_i, batch.identity[indices], cap=cap)
        loss = loss_e - loss_i * config.beta
        _check_divergence(loss.item(), config, tag)
        with no_grad():
            plain_i = cross_entropy(p_i, batch.identity[indices]).item() if cap is not None else loss_i.item()
        backward(loss)
        sgd_step(model.trainable_parameters(), state)
        return {'L_e': loss_e.item(), 'L_i': plain_i, 'loss': loss.item()}

    return _run_epochs(step, len(batch), config.epochs_adv, config, rng, tag, _as_log(writer))


def identity_refit_phase(model, split, config, fold=0, t=0, writer=None, state=None, tag='hybrid/refit',
                         features=None):
    """Re-initialize (policy 'fresh') and train the identity head on the frozen base.
    Args:
        features [tuple]: optional cached (train, val) base outputs
    Returns:
        identity accuracy of the refit head on split.val (split.train without one)
    """
    if not (model.frozen['base'] and model.frozen['emotion_head']):
        raise ProtocolError("{}: base and emotion head must be frozen during the identity refit".format(tag))
    if model.frozen['identity_head']:
        raise ProtocolError("{}: the identity head is frozen, nothing to refit".format(tag))
    head = model.identity_head
    if state is None:
        state = OptimizerState(config.learning_rate, config.momentum)
    if config.reinit_policy == 'fresh':
        reinit_head(model, 'identity_head', phase_seed(config.seed, fold, t, 'refit_head'), state)

    if features is None:
        train_features = extract_features(model.base, split.train.x)
        eval_features = extract_features(model.base, split.eval.x) if split.val is not None else train_features
    else:
        train_features, eval_features = features
    rng = np.random.default_rng(phase_seed(config.seed, fold, t, 'refit'))
    _train_head(head, train_features, split.train.identity, config, config.epochs_refit, rng, state, tag,
                _as_log(writer))

    if all(not np.any(w.data) for w in head.weights):
        raise ProtocolError("{}: every identity head weight collapsed to zero".format(tag))
    return head_accuracy(head, eval_features, split.eval.identity)


@dataclass
class TraceRecord:
    t: int
    L_e: float
    L_i: float
    acc_e_val: float
    acc_i_refit_val: float
    acc_e_train: float
    acc_i_refit_train: float
    early_stop: bool = False


@dataclass
class LoopTrace:
    """One record per outer iteration of the adversarial loop.
    """
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record):
        if self.records and record.t <= self.records[-1].t:
            raise ValueError("trace iterations must increase, got {} after {}".format(record.t, self.records[-1].t))
        self.records.append(record)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    @property
    def early_stopped(self):
        return bool(self.records) and self.records[-1].early_stop

    def __len__(self):
        return len(self.records)

    def to_csv(self, path):
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=TRACE_COLUMNS, lineterminator='\n')
            writer.writeheader()
            for record in self.records:
                row = asdict(record)
                row['early_stop'] = int(record.early_stop)
                writer.writerow({key: repr(float(value)) if isinstance(value, float) else value
                                 for key, value in row.items()})

    @classmethod
    def from_csv(cls, path):
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
        trace = cls()
        for row in rows:
            trace.append(TraceRecord(
                t=int(row['t']), early_stop=bool(int(row['early_stop'])),
                **{key: float(row[key]) for key in TRACE_COLUMNS[1:-1]}))
        return trace


def run_algorithm1(model, split, config, fold=0, writer=None):
    """Adversarial training of the shared base.
        1. multi-task initialization
        2. repeat T times: freeze W_i -> adversarial phase -> freeze W_c, W_e -> identity refit
    With config.early_stop set, the loop ends once the refit identity accuracy stays at
    or below chance + epsilon for `patience` consecutive iterations.
    Returns:
        base [ConvBase], trace [LoopTrace]
    Raises:
        DivergenceError carrying the partial trace
    """
    log = _as_log(writer)
    trace = LoopTrace()
    for group in model.GROUPS:
        set_frozen(model, group, False)
    refit_state = OptimizerState(config.learning_rate, config.momentum)
    chance = 1.0 / model.identity_head.num_classes
    below = 0
    try:
        multitask_init(model, split, config, fold, log)
        for t in range(1, config.T + 1):
            set_frozen(model, 'identity_head', True)
            set_frozen(model, 'base', False)
            set_frozen(model, 'emotion_head', False)
            history = adversarial_phase(model, split, config, fold, t, log)

            set_frozen(model, 'base', True)
            set_frozen(model, 'emotion_head', True)
            set_frozen(model, 'identity_head', False)
            train_features = extract_features(model.base, split.train.x)
            eval_features = extract_features(model.base, split.eval.x) if split.val is not None else train_features
            acc_i_val = identity_refit_phase(model, split, config, fold, t, log, refit_state,
                                             features=(train_features, eval_features))

            record = TraceRecord(
                t=t, L_e=history[-1]['L_e'], L_i=history[-1]['L_i'],
                acc_e_val=head_accuracy(model.emotion_head, eval_features, split.eval.emotion),
                acc_i_refit_val=acc_i_val,
                acc_e_train=head_accuracy(model.emotion_head, train_features, split.train.emotion),
                acc_i_refit_train=head_accuracy(model.identity_head, train_features, split.train.identity))
            log.add('hybrid/accuracy', {'acc_e_val': record.acc_e_val, 'acc_i_refit_val': record.acc_i_refit_val})
            if config.verbose:
                print("> Iteration {}/{} L_e: {:.4f}, L_i: {:.4f}, emotion val acc: {:.4f}, identity refit val acc: {:.4f}".format(
                    t, config.T, record.L_e, record.L_i, record.acc_e_val, record.acc_i_refit_val))

            if config.early_stop is not None:
                below = below + 1 if acc_i_val <= chance + config.early_stop.epsilon else 0
                record.early_stop = below >= config.early_stop.patience
            trace.append(record)
            if record.early_stop:
                if config.verbose:
                    print("> Early stop at iteration {}: identity refit accuracy at chance for {} iterations".format(
                        t, below))
                break
    except DivergenceError as e:
        e.trace = trace
        raise
    set_frozen(model, 'base', True)
    return model.base, trace
