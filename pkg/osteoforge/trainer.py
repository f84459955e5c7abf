# This file is part of osteoforge
# Copyright (C) 2026  osteoforge contributors
#
# osteoforge is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# osteoforge is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with osteoforge.  If not, see <http://www.gnu.org/licenses/>.
"""
Dataset splitting, ADAM optimization, the training loop and test-set
evaluation.

Every random draw is keyed on (seed, epoch) for shuffling, (seed, step) for
input noise and (augmentation seed, step * batch_size + item) for
augmentation, so prefetching batches in worker threads gives the same
results as sequential execution.
"""
import collections
from concurrent.futures import ThreadPoolExecutor
import itertools
import json
import logging
import math
import os
import time
import numpy
from .autodiff import backward, noGrad
from .common import (
    LOSS,
    PREPROCESS,
    Config,
    ConfigError,
    FormatError,
    ShapeError,
    TrainingError,
    checkChoice,
    checkPositive,
    getRandomGenerator,
    getThreadCount,
)
# pylint: disable=no-name-in-module
from .common import (
    LOSS_L1,
    LOSS_PERCEPTUAL,
    PREPROCESS_STANDARDIZE,
    RANGE_UNIT,
)
# pylint: enable=no-name-in-module
from .image import RadiographImage, TrainingPair, loadPair
from .imageops import AugmentConfig, augment, preprocess as preprocessImage
from .losses import LossNetwork, checkLossMix, mixedLoss
from .quality import MetricConfig, evaluateSet
from .unet import forward

__all__ = (
    'TrainConfig',
    'SplitSpec',
    'TrainHistory',
    'splitDataset',
    'adamStep',
    'train',
    'evaluate',
    'evaluateBaseline',
    'loadDataset',
    'saveDataset',
)

logger = logging.getLogger(__name__)

class TrainConfig(Config):
    """
    batch_size (int)
    learning_rate (float)
        0 freezes the model (history is still recorded).
    beta1, beta2, epsilon (float)
        ADAM constants.
    epochs (int)
        Number of full shuffled passes; the last partial batch is kept.
    loss (str)
        One of "l1", "weighted_l1", "perceptual".
    loss_mix (dict, None)
        {loss: coefficient} weighted sum overriding loss.
    nodule_weight (float)
        Weighted L1 mask weight.
    augment (AugmentConfig or dict)
    preprocess (str)
        Source pipeline: "standardize", "he_clahe" or "none".
    seed (int)
        Shuffling and input noise.
    prefetch (bool)
        Prepare upcoming batches in worker threads.
    """
    _field_list = (
        ('batch_size', 8),
        ('learning_rate', 1e-3),
        ('beta1', 0.9),
        ('beta2', 0.999),
        ('epsilon', 1e-8),
        ('epochs', 100),
        ('loss', LOSS_L1),
        ('loss_mix', None),
        ('nodule_weight', 30.0),
        ('augment', AugmentConfig()),
        ('preprocess', PREPROCESS_STANDARDIZE),
        ('seed', 0),
        ('prefetch', False),
    )
    PRESET_DICT = {
        'default': {},
        'v1': {
            'learning_rate': 1e-4,
            'epochs': 200,
            'preprocess': 'he_clahe',
            'augment': {
                'horizontal_flip': 0.5,
                'noise_std': 0.0,
                'bias_range': 0.0,
                'zoom_range': 0.2,
                'sharpen_alpha': 0.0,
                'sharpen_prob': 0.0,
                'rotation_deg': 4.0,
                'shift_range': 0.1,
            },
        },
    }

    @classmethod
    def fromPreset(cls, name, **kw):
        """
        Preset values, updated by kw.
        """
        try:
            value_dict = dict(cls.PRESET_DICT[name])
        except KeyError:
            raise ConfigError(
                'preset must be one of %r, got %r' % (
                    sorted(cls.PRESET_DICT),
                    name,
                ),
                field='preset',
            ) from None
        value_dict.update(kw)
        return cls(**value_dict)

    def validate(self):
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(
                'batch_size must be a positive integer, got %r' % (self.batch_size, ),
                field='batch_size',
            )
        checkPositive(self, 'learning_rate', strict=False)
        for name in ('beta1', 'beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError('%s must be in [0, 1)' % (name, ), field=name)
        checkPositive(self, 'epsilon')
        checkPositive(self, 'epochs', strict=False)
        checkPositive(self, 'nodule_weight', strict=False)
        checkPositive(self, 'seed', strict=False)
        checkChoice(self, 'loss', LOSS)
        checkChoice(self, 'preprocess', PREPROCESS)
        if self.loss_mix is not None:
            checkLossMix(self.loss_mix)
        self.augment = AugmentConfig.fromDict(self.augment)

    def getLossMix(self):
        if self.loss_mix is None:
            return {self.loss: 1.0}
        return dict(self.loss_mix)

class SplitSpec(Config):
    """
    fractions ((train, validation, test))
        Non-negative, summing to 1.
    seed (int)
    """
    _field_list = (
        ('fractions', (0.6, 0.2, 0.2)),
        ('seed', 0),
    )

    def validate(self):
        self.fractions = tuple(float(x) for x in self.fractions)
        if len(self.fractions) != 3 or min(self.fractions) < 0:
            raise ConfigError(
                'fractions must be 3 non-negative values, got %r' % (self.fractions, ),
                field='fractions',
            )
        if abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigError('fractions must sum to 1', field='fractions')
        checkPositive(self, 'seed', strict=False)

def splitDataset(item_list, spec=None):
    """
    Shuffle item_list and partition it into (train, validation, test) lists.
    Validation and test counts are rounded half up, the remainder goes to
    train.
    """
    spec = SplitSpec.fromDict(spec)
    item_list = list(item_list)
    total = len(item_list)
    if not total:
        raise ShapeError('cannot split an empty dataset', field='pairs')
    _, val_fraction, test_fraction = spec.fractions
    val_count = min(total, math.floor(total * val_fraction + .5))
    test_count = min(total - val_count, math.floor(total * test_fraction + .5))
    train_count = total - val_count - test_count
    order = getRandomGenerator(spec.seed).permutation(total)
    shuffled = [item_list[x] for x in order]
    return (
        shuffled[:train_count],
        shuffled[train_count:train_count + val_count],
        shuffled[train_count + val_count:],
    )

def adamStep(param_dict, grad_dict, state, cfg, t):
    """
    Bias-corrected ADAM update, in place.

    param_dict ({name: array})
    grad_dict ({name: array or None})
        A missing or None gradient counts as zero.
    state (dict)
        Moment estimates, empty on first call.
    cfg (TrainConfig)
        learning_rate, beta1, beta2 and epsilon.
    t (int)
        1-based step number.
    """
    if t < 1:
        raise ConfigError('ADAM step number starts at 1, got %r' % (t, ), field='t')
    first_moment_dict = state.setdefault('m', {})
    second_moment_dict = state.setdefault('v', {})
    first_correction = 1 - cfg.beta1 ** t
    second_correction = 1 - cfg.beta2 ** t
    for name, value in param_dict.items():
        grad = grad_dict.get(name)
        if grad is None:
            grad = numpy.zeros_like(value)
        elif grad.shape != value.shape:
            raise ShapeError(
                'gradient of %r has shape %r, expected %r' % (
                    name,
                    grad.shape,
                    value.shape,
                ),
                field=name,
            )
        first_moment = first_moment_dict.get(name)
        if first_moment is None:
            first_moment = first_moment_dict[name] = numpy.zeros_like(value)
            second_moment_dict[name] = numpy.zeros_like(value)
        second_moment = second_moment_dict[name]
        first_moment *= cfg.beta1
        first_moment += (1 - cfg.beta1) * grad
        second_moment *= cfg.beta2
        second_moment += (1 - cfg.beta2) * grad * grad
        value -= cfg.learning_rate * (first_moment / first_correction) / (
            numpy.sqrt(second_moment / second_correction) + cfg.epsilon
        )

class TrainHistory:
    """
    Per-epoch records: train_loss, val_loss (None without validation set),
    seconds, and the loss of every step in step_losses.
    """
    def __init__(self):
        self.train_loss = []
        self.val_loss = []
        self.seconds = []
        self.step_losses = []

    def __len__(self):
        return len(self.train_loss)

    def append(self, train_loss, val_loss, seconds, step_losses):
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.seconds.append(seconds)
        self.step_losses.append(list(step_losses))

    def iterRecords(self):
        for epoch, record in enumerate(zip(
            self.train_loss,
            self.val_loss,
            self.seconds,
            self.step_losses,
        ), 1):
            yield dict(zip(
                ('epoch', 'train_loss', 'val_loss', 'seconds', 'step_losses'),
                (epoch, ) + record,
            ))

    def getLossSequence(self):
        """
        All step losses, in execution order.
        """
        return [x for epoch in self.step_losses for x in epoch]

def _writeRecord(path, record):
    with open(path, 'a', encoding='utf-8') as history_file:
        history_file.write(json.dumps(record) + '\n')

def loadDataset(path):
    """
    Read a dataset manifest: {"pairs": [{"source", "target", "mask"}, ...]}.
    Relative paths are resolved against the manifest's directory.
    Returns a list of path dicts.
    """
    try:
        with open(path, encoding='utf-8') as dataset_file:
            manifest = json.load(dataset_file)
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (path, ), field='dataset') from None
    except ValueError as exc:
        raise FormatError(
            'Malformed dataset %r: %s' % (path, exc),
            field='dataset',
        ) from None
    pair_list = manifest.get('pairs') if isinstance(manifest, dict) else None
    if not isinstance(pair_list, list):
        raise FormatError('Dataset %r lacks a pair list' % (path, ), field='pairs')
    directory = os.path.dirname(path)
    result = []
    for entry in pair_list:
        try:
            result.append({
                role: os.path.join(directory, entry[role])
                for role in ('source', 'target', 'mask')
            })
        except (KeyError, TypeError):
            raise FormatError(
                'Malformed dataset entry %r' % (entry, ),
                field='pairs',
            ) from None
    return result

def saveDataset(path, path_dict_list):
    """
    Write a dataset manifest, storing paths relative to its directory.
    """
    directory = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', encoding='utf-8') as dataset_file:
        json.dump(
            {
                'pairs': [
                    {
                        role: os.path.relpath(os.path.abspath(entry[role]), directory)
                        for role in ('source', 'target', 'mask')
                    }
                    for entry in path_dict_list
                ],
            },
            dataset_file,
            indent=1,
        )
        dataset_file.write('\n')
    return path

def _getPair(item):
    if isinstance(item, TrainingPair):
        return item
    return loadPair(item)

def _checkSize(pair, model):
    size = model.config.input_size
    if pair.shape != (size, size):
        raise TrainingError(
            'pair is %ix%i, model expects %ix%i' % (pair.shape + (size, size)),
            field='input_size',
        )

def _prepareBatch(item_list, model, cfg, step, augment_enabled):
    """
    Load, preprocess and (optionally) augment a batch.
    Returns (source, target, mask) N x 1 x H x W arrays, target in [-1, 1].
    """
    source_list = []
    target_list = []
    mask_list = []
    for index, item in enumerate(item_list):
        pair = _getPair(item)
        _checkSize(pair, model)
        pair = TrainingPair(
            preprocessImage(pair.source, cfg.preprocess),
            pair.target,
            pair.nodule_mask,
        )
        if augment_enabled:
            pair = augment(pair, cfg.augment, step * cfg.batch_size + index)
        source_list.append(pair.source.pixels)
        target_list.append(pair.target.pixels * 2 - 1)
        mask_list.append(pair.nodule_mask.pixels)
    return tuple(
        numpy.stack(x)[:, numpy.newaxis].astype(model.dtype)
        for x in (source_list, target_list, mask_list)
    )

def _iterPrepared(task_list, prepare, prefetch):
    """
    Yield prepare(task) for every task, in order. With prefetch, up to
    getThreadCount() upcoming tasks run in worker threads.
    """
    if not prefetch:
        for task in task_list:
            yield prepare(*task)
        return
    worker_count = getThreadCount()
    task_iterator = iter(task_list)
    with ThreadPoolExecutor(max_workers=worker_count) as executor:
        pending = collections.deque(
            executor.submit(prepare, *task)
            for task in itertools.islice(task_iterator, worker_count)
        )
        while pending:
            future = pending.popleft()
            for task in itertools.islice(task_iterator, 1):
                pending.append(executor.submit(prepare, *task))
            yield future.result()

def _getLossNetwork(loss_mix, loss_net, cfg, model):
    if loss_net is None and LOSS_PERCEPTUAL in loss_mix:
        logger.info('No loss network given, using seeded random weights')
        loss_net = LossNetwork.random(cfg.seed, dtype=model.config.dtype)
    return loss_net

def _iterBatchList(index_list, batch_size):
    for start in range(0, len(index_list), batch_size):
        yield index_list[start:start + batch_size]

def _validate(model, val_items, cfg, loss_mix, loss_net):
    total = 0.
    count = 0
    with noGrad():
        for batch_items in _iterBatchList(val_items, cfg.batch_size):
            source, target, mask = _prepareBatch(batch_items, model, cfg, 0, False)
            loss = mixedLoss(
                forward(model, source, training=False),
                target,
                mask,
                loss_mix,
                cfg.nodule_weight,
                loss_net,
            )
            total += loss.item() * len(batch_items)
            count += len(batch_items)
    return total / count

def train(model, datasets, cfg=None, loss_net=None, history_path=None):
    """
    Optimize model on datasets, a (train items, validation items) pair.
    Items are TrainingPair instances or {source, target, mask} path dicts.

    Each step: preprocess sources, augment, map targets to [-1, 1],
    forward with input noise, compute the configured loss, backward and
    ADAM update. Validation loss is computed once per epoch without
    augmentation or noise.

    loss_net (LossNetwork, None)
        Required by the perceptual loss; seeded random weights if omitted.
    history_path (str, None)
        If given, one JSON line per epoch is appended to it.
    Returns a TrainHistory.
    Raises TrainingError on non-finite loss or image/model size mismatch.
    """
    cfg = TrainConfig.fromDict(cfg)
    train_items, val_items = (list(x) for x in datasets)
    if not train_items:
        raise TrainingError('empty training set', field='pairs')
    loss_mix = cfg.getLossMix()
    loss_net = _getLossNetwork(loss_mix, loss_net, cfg, model)
    param_dict = dict(model.iterParameters())
    state = {}
    history = TrainHistory()
    step = 0

    def prepare(step, batch_items):
        return _prepareBatch(batch_items, model, cfg, step, True)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = getRandomGenerator(cfg.seed, epoch).permutation(len(train_items))
        task_list = [
            (step + offset, [train_items[x] for x in batch])
            for offset, batch in enumerate(
                _iterBatchList(order, cfg.batch_size),
                1,
            )
        ]
        step_losses = []
        for source, target, mask in _iterPrepared(task_list, prepare, cfg.prefetch):
            step += 1
            model.zeroGrad()
            loss = mixedLoss(
                forward(model, source, training=True, noise_seed=(cfg.seed, step)),
                target,
                mask,
                loss_mix,
                cfg.nodule_weight,
                loss_net,
            )
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    'non-finite loss %r at epoch %i, step %i' % (value, epoch, step),
                    field='loss',
                )
            backward(loss)
            adamStep(
                {name: x.value for name, x in param_dict.items()},
                {name: x.grad for name, x in param_dict.items()},
                state,
                cfg,
                step,
            )
            step_losses.append(value)
        train_loss = sum(step_losses) / len(step_losses)
        val_loss = None
        if val_items:
            val_loss = _validate(model, val_items, cfg, loss_mix, loss_net)
        seconds = time.perf_counter() - start
        history.append(train_loss, val_loss, seconds, step_losses)
        logger.info(
            'epoch %i/%i: train loss %.6g, validation loss %s, %.2fs',
            epoch,
            cfg.epochs,
            train_loss,
            'n/a' if val_loss is None else '%.6g' % val_loss,
            seconds,
        )
        if history_path is not None:
            _writeRecord(history_path, list(history.iterRecords())[-1])
    model.zeroGrad()
    return history

def predictUnit(model, source, preprocess=PREPROCESS_STANDARDIZE):
    """
    Network output for a single model-sized source image, mapped from
    [-1, 1] to [0, 1] as (p + 1) / 2.
    """
    _checkSize(source, model)
    with noGrad():
        output = forward(
            model,
            preprocessImage(source, preprocess).pixels[numpy.newaxis, numpy.newaxis],
            training=False,
        )
    return RadiographImage(
        numpy.clip((output.value[0, 0].astype(numpy.float64) + 1) / 2, 0, 1),
        RANGE_UNIT,
    )

def evaluatePredictor(predictor, test_items, metric_cfg=None, label='model'):
    """
    Score predictor(pair) -> unit RadiographImage against pair targets.
    Returns a MetricReport.
    """
    pair_list = (_getPair(x) for x in test_items)
    return evaluateSet(
        ((predictor(pair), pair.target) for pair in pair_list),
        MetricConfig.fromDict(metric_cfg),
        label=label,
    )

def evaluate(model, test_items, metric_cfg=None, preprocess=PREPROCESS_STANDARDIZE, label='model'):
    """
    Metrics of model predictions, mapped back to [0, 1], against targets.
    Does not modify the model.
    """
    return evaluatePredictor(
        lambda pair: predictUnit(model, pair.source, preprocess),
        test_items,
        metric_cfg,
        label,
    )

def evaluateBaseline(test_items, metric_cfg=None, label='identity'):
    """
    Metrics of the source radiographs used as predictions.
    """
    return evaluatePredictor(lambda pair: pair.source, test_items, metric_cfg, label)
