"""
Veil
Evaluation protocol and report.

Per fold, five test accuracies:
    Face            base + identity head trained end to end on identity labels
    Emotion         base + emotion head trained end to end on emotion labels
    Emotion2Face    fresh identity head fine-tuned on the frozen Emotion base (leakage)
    Hybrid2Emotion  fresh emotion head fine-tuned on the frozen adversarially trained base
    Hybrid2Face     fresh identity head fine-tuned on the same base (residual leakage)

Emotion2Face and Hybrid2Face probes share head architecture, epochs and seeds, so
they differ only by the frozen base they read.

Licensed under the MIT License (see LICENSE for details)
"""

import csv
import io
import json
import statistics
from dataclasses import dataclass, field, replace
from typing import Dict, List

import numpy as np

from .config import ModelConfig, TrainConfig
from .datasets import ImageBatch
from .errors import DatasetError, VeilError
from .model import (SingleTaskModel, accuracy, build_head, build_hybrid, build_single_task, extract_features,
                    head_accuracy, set_frozen)
from .train import (DataSplit, finetune_head_frozen_base, holdout_split, phase_seed, run_algorithm1,
                    train_single_task)

METRICS = ('Face', 'Emotion', 'Emotion2Face', 'Hybrid2Emotion', 'Hybrid2Face')
# which label set each metric is scored on
METRIC_TASK = {
    'Face': 'identity',
    'Emotion': 'emotion',
    'Emotion2Face': 'identity',
    'Hybrid2Emotion': 'emotion',
    'Hybrid2Face': 'identity',
}


@dataclass
class FoldContext:
    """Everything a stage of one (seed, fold) needs.
    """
    seed: int
    fold: int
    train: DataSplit
    test: ImageBatch
    model_config: ModelConfig
    train_config: TrainConfig
    num_identities: int
    num_emotions: int

    def classes(self, task):
        return self.num_identities if task == 'identity' else self.num_emotions


def fold_context(corpus, plan, fold, run_config, seed):
    """Split the corpus for one fold, with a group-disjoint validation holdout
    carved from the training side. Seeds of the run override the config seeds.
    """
    train_idx, test_idx = plan.split(corpus.group, fold)
    if len(test_idx) == 0 or len(train_idx) == 0:
        raise DatasetError("fold {} has an empty train or test side".format(fold))
    train_config = replace(run_config.train, seed=seed)
    holdout_seed = int(phase_seed(seed, fold, 0, 'holdout').generate_state(1)[0])
    return FoldContext(
        seed=seed, fold=fold,
        train=holdout_split(corpus.subset(train_idx), train_config.val_fraction, holdout_seed),
        test=corpus.subset(test_idx),
        model_config=replace(run_config.model, seed=seed),
        train_config=train_config,
        num_identities=run_config.synthetic.num_identities,
        num_emotions=run_config.synthetic.num_emotions)


def train_baseline(ctx, task, writer=None):
    """Emotion (task 'emotion') or Face (task 'identity') model of a fold.
    Returns:
        model, test accuracy
    """
    model = build_single_task(ctx.model_config, ctx.classes(task),
                              phase_seed(ctx.seed, ctx.fold, 0, 'model:' + task))
    train_single_task(model, ctx.train.train, task, ctx.train_config, ctx.fold, writer,
                      tag='face' if task == 'identity' else 'emotion')
    return model, accuracy(model.base, model.head, ctx.test.x, ctx.test.labels(task))


def probe(base, ctx, task, writer=None, tag='probe'):
    """Fresh head for `task` fine-tuned on a frozen base.
    The head seed depends on (seed, fold, task) only.
    Returns:
        probe model, test accuracy
    """
    head = build_head(ctx.model_config, ctx.classes(task), phase_seed(ctx.seed, ctx.fold, 0, 'probe_head:' + task),
                      name='head')
    model = SingleTaskModel(base, head)
    set_frozen(model, 'base', True)
    features = extract_features(base, ctx.train.train.x)
    finetune_head_frozen_base(model, ctx.train.train, task, ctx.train_config, ctx.fold, writer, tag=tag,
                              features=features)
    return model, head_accuracy(head, extract_features(base, ctx.test.x), ctx.test.labels(task))


def train_hybrid(ctx, writer=None):
    """Adversarially trained Hybrid model of a fold.
    Returns:
        model, trace
    """
    model = build_hybrid(ctx.model_config, ctx.num_emotions, ctx.num_identities,
                         phase_seed(ctx.seed, ctx.fold, 0, 'model:hybrid'))
    _, trace = run_algorithm1(model, ctx.train, ctx.train_config, ctx.fold, writer)
    return model, trace


def evaluate_fold(ctx):
    """The whole protocol of one fold, in memory.
    Returns:
        dict metric -> test accuracy, trace
    """
    metrics = {}
    _, metrics['Face'] = train_baseline(ctx, 'identity')
    emotion, metrics['Emotion'] = train_baseline(ctx, 'emotion')
    _, metrics['Emotion2Face'] = probe(emotion.base, ctx, 'identity', tag='emotion2face')
    hybrid, trace = train_hybrid(ctx)
    _, metrics['Hybrid2Emotion'] = probe(hybrid.base, ctx, 'emotion', tag='hybrid2emotion')
    _, metrics['Hybrid2Face'] = probe(hybrid.base, ctx, 'identity', tag='hybrid2face')
    return metrics, trace


def evaluate_protocol(corpus, plan, run_config, seeds=None, folds=None):
    """Run every fold of every seed and collect an ExperimentReport. A failing
    fold is recorded with its error code and the remaining folds still run.
    Args:
        corpus [ImageBatch]: the expanded corpus
        plan [FoldPlan]
        seeds [list]: defaults to run_config.seeds
        folds [list]: fold indices, defaults to all
    """
    report = ExperimentReport(num_identities=run_config.synthetic.num_identities,
                              num_emotions=run_config.synthetic.num_emotions,
                              config=run_config.to_dict())
    for seed in (run_config.seeds if seeds is None else seeds):
        for fold in (range(plan.k) if folds is None else folds):
            try:
                metrics, _ = evaluate_fold(fold_context(corpus, plan, fold, run_config, seed))
            except VeilError as e:
                report.record_error(seed, fold, e)
                if run_config.train.verbose:
                    print("> Seed {} fold {} aborted: {}".format(seed, fold, e.one_line()))
                continue
            report.add(seed, fold, metrics)
    return report


def _percent(value):
    return '{:.2f}'.format(100.0 * value)


@dataclass
class ExperimentReport:
    """Five accuracies per (seed, fold), their means over folds per seed, and the
    median of the per-seed means.
    """
    num_identities: int
    num_emotions: int
    config: dict = field(default_factory=dict)
    folds: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    errors: List[dict] = field(default_factory=list)

    def add(self, seed, fold, metrics):
        missing = [m for m in METRICS if m not in metrics]
        if missing:
            raise DatasetError("seed {} fold {}: incomplete metrics, missing {}".format(seed, fold, ', '.join(missing)))
        self.folds.setdefault(str(seed), {})['{:02d}'.format(fold)] = {m: float(metrics[m]) for m in METRICS}

    def record_error(self, seed, fold, error):
        self.errors.append({'seed': int(seed), 'fold': int(fold),
                            'code': getattr(error, 'code', 'E_INTERNAL'), 'message': str(error)})

    @property
    def seeds(self):
        return sorted(self.folds, key=int)

    def chance(self):
        return {m: 1.0 / (self.num_identities if METRIC_TASK[m] == 'identity' else self.num_emotions)
                for m in METRICS}

    def means(self, seed):
        rows = self.folds[str(seed)].values()
        return {m: float(np.mean([row[m] for row in rows])) for m in METRICS}

    def median(self):
        if not self.folds:
            raise DatasetError("report has no completed folds")
        per_seed = [self.means(seed) for seed in self.seeds]
        return {m: float(statistics.median(means[m] for means in per_seed)) for m in METRICS}

    def to_dict(self):
        return {
            'metrics': list(METRICS),
            'num_identities': self.num_identities,
            'num_emotions': self.num_emotions,
            'chance': self.chance(),
            'seeds': {seed: {'folds': self.folds[seed], 'mean': self.means(seed)} for seed in self.seeds},
            'median': self.median(),
            'errors': sorted(self.errors, key=lambda e: (e['seed'], e['fold'])),
            'config': self.config,
        }

    @classmethod
    def from_dict(cls, data):
        report = cls(num_identities=data['num_identities'], num_emotions=data['num_emotions'],
                     config=data.get('config', {}), errors=list(data.get('errors', [])))
        for seed, entry in data['seeds'].items():
            for fold, metrics in entry['folds'].items():
                report.add(seed, int(fold), metrics)
        return report

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'

    def rows(self):
        """(label, seed, fold, values) rows: folds, per-seed means, median, chance.
        """
        rows = []
        for seed in self.seeds:
            for fold in sorted(self.folds[seed]):
                rows.append(('fold', seed, fold, self.folds[seed][fold]))
            rows.append(('mean', seed, '', self.means(seed)))
        if len(self.seeds) > 1:
            rows.append(('median', '', '', self.median()))
        rows.append(('chance', '', '', self.chance()))
        return rows

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(['row', 'seed', 'fold'] + list(METRICS))
        for label, seed, fold, values in self.rows():
            writer.writerow([label, seed, fold] + [_percent(values[m]) for m in METRICS])
        return buffer.getvalue()

    def to_text(self):
        """Aligned table, accuracies in percent, one column per model.
        """
        header = ['', ] + list(METRICS)
        lines = []
        for label, seed, fold, values in self.rows():
            if label == 'fold':
                name = 'seed {} fold {}'.format(seed, fold)
            elif label == 'mean':
                name = 'seed {} mean'.format(seed)
            else:
                name = label
            lines.append([name] + [_percent(values[m]) for m in METRICS])
        widths = [max(len(row[i]) for row in [header] + lines) for i in range(len(header))]
        out = ['  '.join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
               for row in [header] + lines]
        out.insert(1, '-' * len(out[0]))
        if self.errors:
            out.append('')
            out.extend('seed {} fold {:02d} failed: code={} {}'.format(e['seed'], e['fold'], e['code'], e['message'])
                       for e in sorted(self.errors, key=lambda e: (e['seed'], e['fold'])))
        return '\n'.join(out) + '\n'
