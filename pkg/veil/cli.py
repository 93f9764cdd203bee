"""
Veil
Command line.

Usage:
    veil generate <config> [--out DIR]
    veil run <config> --stage {face,emotion,emotion2face,hybrid,probe,all} [--workers N] [--out DIR] [--quiet]
    veil report <outdir>

Stage outputs live under <out>/seed_<s>/fold_<kk>/<stage>/ (metrics.json, model/,
trace.csv, logs/). A stage whose metrics.json exists is skipped, so an interrupted
run resumes where it stopped. VEIL_SEED overrides every seed of the config.

Exit status: 0 on success, 2 with `veil: error code=<CODE> message=...` on stderr
for package errors, 1 with code E_INTERNAL for anything else.

Licensed under the MIT License (see LICENSE for details)
"""

import argparse
import json
import os
import sys
from multiprocessing import Pool

from torch.utils.tensorboard import SummaryWriter
# pip install tensorboard
# tensorboard --logdir=runs

from .config import RunConfig
from .datasets import (ImageBatch, expand_corpus, generate_synthetic, load_dataset, load_folds,
                       make_group_folds, save_dataset, save_folds)
from .errors import DatasetError, DependencyError, DivergenceError, VeilError
from .eval import METRICS, ExperimentReport, fold_context, probe, train_baseline, train_hybrid
from .model import head_accuracy, extract_features, load_model, save_model
from .train import ScalarLog

STAGES = ('face', 'emotion', 'emotion2face', 'hybrid', 'probe')
REQUIRES = {'emotion2face': 'emotion', 'probe': 'hybrid'}
CONFIG_ECHO = 'config.json'
METRICS_FILE = 'metrics.json'
ERROR_FILE = 'error.json'
MODEL_DIR = 'model'
TRACE_FILE = 'trace.csv'


def _write_json(data, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def _read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError("cannot read {}: {}".format(path, e))


def seed_dir(out, seed):
    return os.path.join(out, 'seed_{}'.format(seed))


def fold_dir(out, seed, fold):
    return os.path.join(seed_dir(out, seed), 'fold_{:02d}'.format(fold))


# =========================================================================
# Corpus
# =========================================================================
def load_originals(config):
    """Original (pre-augmentation) images: a dataset directory or the synthetic generator.
    """
    if config.dataset_path:
        return load_dataset(config.dataset_path, config.synthetic.num_identities, config.synthetic.num_emotions)
    return generate_synthetic(config.synthetic)


def build_corpus(config, images):
    """Expanded corpus as one ImageBatch; augment.target_size 0 keeps the originals only.
    """
    if config.augment.target_size:
        images = expand_corpus(images, config.augment, config.synthetic.seed)
    return ImageBatch.from_images(images)


def fold_plan(config, images, out, seed):
    """Fold plan of a seed, reloaded from folds.json when a previous run wrote one.
    """
    path = os.path.join(seed_dir(out, seed), 'folds.json')
    if os.path.exists(path):
        plan = load_folds(path)
        if plan.k != config.folds:
            raise DatasetError("{} holds {} folds but the config asks for {}".format(path, plan.k, config.folds))
        return plan
    plan = make_group_folds(images, config.folds, seed)
    os.makedirs(seed_dir(out, seed), exist_ok=True)
    save_folds(plan, path)
    if config.train.verbose:
        print("> Seed {}: {} folds over {} groups, stratified by {}".format(
            seed, plan.k, sum(len(f) for f in plan.folds), plan.stratification))
    return plan


# =========================================================================
# Stages
# =========================================================================
def _prerequisite(stage_root, stage):
    path = os.path.join(stage_root, REQUIRES[stage], MODEL_DIR)
    return load_model(path)


def stage_face(ctx, root, out_dir, log):
    model, acc = train_baseline(ctx, 'identity', log)
    save_model(model, os.path.join(out_dir, MODEL_DIR))
    return {'Face': acc}, {}


def stage_emotion(ctx, root, out_dir, log):
    model, acc = train_baseline(ctx, 'emotion', log)
    save_model(model, os.path.join(out_dir, MODEL_DIR))
    return {'Emotion': acc}, {}


def stage_emotion2face(ctx, root, out_dir, log):
    emotion = _prerequisite(root, 'emotion2face')
    model, acc = probe(emotion.base, ctx, 'identity', log, tag='emotion2face')
    save_model(model, os.path.join(out_dir, MODEL_DIR))
    return {'Emotion2Face': acc}, {}


def stage_hybrid(ctx, root, out_dir, log):
    try:
        model, trace = train_hybrid(ctx, log)
    except DivergenceError as e:
        if e.trace is not None:
            e.trace.to_csv(os.path.join(out_dir, TRACE_FILE))
        raise
    save_model(model, os.path.join(out_dir, MODEL_DIR))
    trace.to_csv(os.path.join(out_dir, TRACE_FILE))
    extra = {
        'iterations': len(trace),
        'early_stopped': trace.early_stopped,
        'emotion_head_test_accuracy': head_accuracy(model.emotion_head, extract_features(model.base, ctx.test.x),
                                                    ctx.test.emotion),
    }
    return {}, extra


def stage_probe(ctx, root, out_dir, log):
    hybrid = _prerequisite(root, 'probe')
    metrics = {}
    for task, name in (('emotion', 'Hybrid2Emotion'), ('identity', 'Hybrid2Face')):
        model, metrics[name] = probe(hybrid.base, ctx, task, log, tag=name.lower())
        save_model(model, os.path.join(out_dir, MODEL_DIR, task))
    return metrics, {}


STAGE_FUNCS = {
    'face': stage_face,
    'emotion': stage_emotion,
    'emotion2face': stage_emotion2face,
    'hybrid': stage_hybrid,
    'probe': stage_probe,
}


def check_dependencies(out, seeds, folds, stages):
    """Every prerequisite of a requested stage must be requested too or already done.
    """
    for stage in stages:
        needed = REQUIRES.get(stage)
        if needed is None or needed in stages:
            continue
        for seed in seeds:
            for fold in range(folds):
                path = os.path.join(fold_dir(out, seed, fold), needed, METRICS_FILE)
                if not os.path.exists(path):
                    raise DependencyError("stage '{}' needs stage '{}' first: {} is missing".format(stage, needed, path))


def run_fold(config, corpus, plan, seed, fold, stages, out):
    """Run the requested stages of one (seed, fold) in order.
    Returns:
        None, or the error that aborted the fold
    """
    root = fold_dir(out, seed, fold)
    ctx = fold_context(corpus, plan, fold, config, seed)
    for stage in stages:
        out_dir = os.path.join(root, stage)
        if os.path.exists(os.path.join(out_dir, METRICS_FILE)):
            if config.train.verbose:
                print("> Seed {} fold {:02d} {}: done, skipping".format(seed, fold, stage))
            continue
        os.makedirs(out_dir, exist_ok=True)
        if config.train.verbose:
            print("> Seed {} fold {:02d} {}".format(seed, fold, stage))
        writer = SummaryWriter(log_dir=os.path.join(out_dir, 'logs')) if config.tensorboard else None
        try:
            metrics, extra = STAGE_FUNCS[stage](ctx, root, out_dir, ScalarLog(writer))
        except VeilError as e:
            _write_json({'code': e.code, 'message': str(e)}, os.path.join(out_dir, ERROR_FILE))
            if config.train.verbose:
                print("> Seed {} fold {:02d} {} aborted: {}".format(seed, fold, stage, e.one_line()))
            return e
        finally:
            if writer is not None:
                writer.close()
        error_path = os.path.join(out_dir, ERROR_FILE)
        if os.path.exists(error_path):
            os.remove(error_path)
        _write_json({'stage': stage, 'seed': seed, 'fold': fold, 'metrics': metrics, 'extra': extra},
                    os.path.join(out_dir, METRICS_FILE))
    return None


# =========================================================================
# Commands
# =========================================================================
def cmd_generate(args):
    config = RunConfig.load(args.config)
    images = generate_synthetic(config.synthetic)
    out = args.out or os.path.join('dataset', config.synthetic.name)
    save_dataset(images, out)
    print("> Generated {} images ({} identities x {} emotions x {} per cell) in {}".format(
        len(images), config.synthetic.num_identities, config.synthetic.num_emotions,
        config.synthetic.images_per_cell, out))
    return out


def cmd_run(args):
    config = RunConfig.load(args.config)
    if args.workers is not None:
        config.workers = args.workers
    config.train.verbose = not args.quiet
    config.validate()
    out = args.out or config.output_dir
    stages = STAGES if args.stage == 'all' else (args.stage,)
    check_dependencies(out, config.seeds, config.folds, stages)

    os.makedirs(out, exist_ok=True)
    config.dump(os.path.join(out, CONFIG_ECHO))
    if config.train.verbose:
        config.display()

    images = load_originals(config)
    corpus = build_corpus(config, images)
    if config.train.verbose:
        print("> Corpus: {} originals expanded to {} images".format(len(images), len(corpus)))

    jobs = []
    for seed in config.seeds:
        plan = fold_plan(config, images, out, seed)
        jobs.extend((config, corpus, plan, seed, fold, stages, out) for fold in range(plan.k))
    if config.workers == 1:
        failures = [run_fold(*job) for job in jobs]
    else:
        with Pool(config.workers) as pool:
            failures = pool.starmap(run_fold, jobs)

    failures = [e for e in failures if e is not None]
    if failures:
        raise failures[0]
    print("> Stage(s) {} finished for {} fold(s) in {}".format(', '.join(stages), len(jobs), out))
    return out


def collect_report(out):
    """ExperimentReport from the stage outputs under `out`.
    """
    config = RunConfig.from_dict(_read_json(os.path.join(out, CONFIG_ECHO)), 'run')
    report = ExperimentReport(num_identities=config.synthetic.num_identities,
                              num_emotions=config.synthetic.num_emotions,
                              config=config.to_dict())
    for seed in config.seeds:
        for fold in range(config.folds):
            root = fold_dir(out, seed, fold)
            metrics = {}
            for stage in STAGES:
                error_path = os.path.join(root, stage, ERROR_FILE)
                if os.path.exists(error_path):
                    error = _read_json(error_path)
                    report.errors.append({'seed': int(seed), 'fold': fold,
                                          'code': error['code'], 'message': error['message']})
                metrics_path = os.path.join(root, stage, METRICS_FILE)
                if os.path.exists(metrics_path):
                    metrics.update(_read_json(metrics_path)['metrics'])
            if all(m in metrics for m in METRICS):
                report.add(seed, fold, metrics)
    if not report.folds:
        raise DatasetError("no completed folds under {}".format(out))
    return report


def cmd_report(args):
    report = collect_report(args.outdir)
    text = report.to_text()
    for name, content in (('report.json', report.to_json()), ('report.csv', report.to_csv()), ('report.txt', text)):
        with open(os.path.join(args.outdir, name), 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
    print(text, end='')
    return report


def build_parser():
    parser = argparse.ArgumentParser(prog='veil', description='Adversarial training of identity-scrubbed emotion features.')
    commands = parser.add_subparsers(dest='command', required=True)

    generate = commands.add_parser('generate', help='render the synthetic corpus to PGM files')
    generate.add_argument('config', help='run configuration (JSON)')
    generate.add_argument('--out', default=None, help='dataset directory (default dataset/<name>)')
    generate.set_defaults(func=cmd_generate)

    run = commands.add_parser('run', help='run protocol stages over all folds')
    run.add_argument('config', help='run configuration (JSON)')
    run.add_argument('--stage', required=True, choices=STAGES + ('all',))
    run.add_argument('--workers', type=int, default=None, help='folds trained in parallel')
    run.add_argument('--out', default=None, help='output directory (default: output_dir of the config)')
    run.add_argument('--quiet', action='store_true', help='no progress output')
    run.set_defaults(func=cmd_run)

    report = commands.add_parser('report', help='aggregate fold metrics into report.json/csv/txt')
    report.add_argument('outdir')
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except VeilError as e:
        print("veil: error {}".format(e.one_line()), file=sys.stderr)
        return 2
    except Exception as e:
        print("veil: error code=E_INTERNAL message={}".format(' '.join(str(e).split()) or type(e).__name__),
              file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
