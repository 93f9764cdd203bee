"""
Veil
Group-aware k-fold splitting.

All augmented copies of one original image share its group_id, and folds are dealt
over group_ids, so no original contributes to both the train and the test side of a
fold. Groups are stratified by (identity, emotion) when every cell holds at least k
groups and by identity alone otherwise. Identity strata smaller than k are dealt
round-robin, so every fold still sees at most ceil(n / k) groups of an identity.

Licensed under the MIT License (see LICENSE for details)
"""

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import List

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold

from ..errors import ConfigError, DatasetError

STRATIFICATIONS = ('identity_emotion', 'identity', 'none')


@dataclass
class FoldPlan:
    """k disjoint sets of group_ids covering every group.
    """
    k: int
    folds: List[List[int]]
    stratification: str = 'none'
    fold_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.fold_of = {}
        for i, groups in enumerate(self.folds):
            for g in groups:
                if g in self.fold_of:
                    raise DatasetError("group {} appears in folds {} and {}".format(g, self.fold_of[g], i))
                self.fold_of[g] = i

    def test_mask(self, groups, fold):
        """Boolean mask of the samples (given by their group ids) tested in `fold`.
        """
        if not 0 <= fold < self.k:
            raise ConfigError("fold index {} outside [0, {})".format(fold, self.k))
        groups = np.asarray(groups)
        unknown = set(np.unique(groups).tolist()) - set(self.fold_of)
        if unknown:
            raise DatasetError("{} group(s) are not covered by the fold plan, e.g. {}".format(
                len(unknown), min(unknown)))
        return np.isin(groups, self.folds[fold])

    def split(self, groups, fold):
        """(train indices, test indices) of a fold.
        """
        mask = self.test_mask(groups, fold)
        return np.flatnonzero(~mask), np.flatnonzero(mask)


def _group_table(group, identity, emotion):
    """One (identity, emotion) pair per group id; groups must not mix labels.
    """
    table = {}
    for g, i, e in zip(np.asarray(group).tolist(), np.asarray(identity).tolist(), np.asarray(emotion).tolist()):
        if table.setdefault(g, (i, e)) != (i, e):
            raise DatasetError("group {} carries labels {} and {}".format(g, table[g], (i, e)))
    return table


def deal_groups(group, identity, emotion, k, seed):
    """FoldPlan over per-sample arrays of group id, identity and emotion.
    """
    if k < 2:
        raise ConfigError("k-fold splitting needs k >= 2, got {}".format(k))
    table = _group_table(group, identity, emotion)
    ids = np.array(sorted(table))
    if len(ids) < k:
        raise DatasetError("{} groups cannot be dealt into {} folds".format(len(ids), k))

    cells = [table[g] for g in ids]
    strata = {
        'identity_emotion': ['{}_{}'.format(*cell) for cell in cells],
        'identity': [str(cell[0]) for cell in cells],
    }
    if min(Counter(strata['identity_emotion']).values()) >= k:
        stratification = 'identity_emotion'
    elif len(set(strata['identity'])) > 1:
        stratification = 'identity'
    else:
        stratification = 'none'

    if stratification == 'none':
        splits = KFold(n_splits=k, shuffle=True, random_state=seed).split(ids)
    elif min(Counter(strata[stratification]).values()) >= k:
        splits = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(ids, strata[stratification])
    else:
        splits = _deal_round_robin(strata[stratification], k, seed)
    folds = [sorted(ids[test].tolist()) for _, test in splits]
    return FoldPlan(k=k, folds=folds, stratification=stratification)


def _deal_round_robin(labels, k, seed):
    """(train, test) index pairs for strata smaller than k, which StratifiedKFold
    refuses: shuffle within each stratum, line the strata up and deal positions
    to folds in turn.
    """
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    order = rng.permutation(len(labels))
    order = order[np.argsort(labels[order], kind='stable')]
    fold_of = np.empty(len(labels), dtype=np.int64)
    fold_of[order] = np.arange(len(labels)) % k
    for fold in range(k):
        yield np.flatnonzero(fold_of != fold), np.flatnonzero(fold_of == fold)


def make_group_folds(images, k=10, seed=0):
    """FoldPlan for a list of LabeledImage.
    """
    if not images:
        raise DatasetError("cannot split an empty corpus")
    return deal_groups([im.group_id for im in images], [im.identity for im in images],
                       [im.emotion for im in images], k, seed)


def save_folds(plan, path):
    """folds.json: the list of group_id lists, one per fold.
    """
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump([list(map(int, groups)) for groups in plan.folds], f)
        f.write('\n')


def load_folds(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            folds = json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError("cannot read fold plan {}: {}".format(path, e))
    if not isinstance(folds, list) or not all(isinstance(fold, list) for fold in folds):
        raise DatasetError("{}: expected a list of group_id lists".format(path))
    return FoldPlan(k=len(folds), folds=[[int(g) for g in fold] for fold in folds], stratification='loaded')
