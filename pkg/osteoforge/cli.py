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
Command line interface.

  osteoforge [--seed N] [--config FILE] [--deterministic] [-v] COMMAND ...
  osteoforge --replay RUN_MANIFEST

Option values come from, by decreasing precedence: command-line flags, the
--config JSON file (keys are option destinations, as recorded in run
manifests), the phantom --spec file, the train --preset, built-in defaults.

Every command writes a run manifest ("<output>.run.json") recording its
argument vector and resolved configuration.
"""
import argparse
import glob
import json
import logging
import os
import sys
from ._version import __version__
from .autodiff import OP_TOLERANCE, gradCheck, iterGradCheckSuite
from .common import (
    LOSS,
    PREPROCESS,
    ConfigError,
    FormatError,
    OsteoForgeError,
    splitName,
)
# pylint: disable=no-name-in-module
from .common import (
    PREPROCESS_STANDARDIZE,
    RANGE_UNIT,
)
# pylint: enable=no-name-in-module
from .enhancer import FusionConfig, fuse, predictBone
from .image import exportPGM, loadImage, savePair, saveImage, IMAGE_SUFFIX
from .imageops import AugmentConfig, minmaxNormalize
from .losses import loadLossNetwork
from .projector import ProjectorConfig, boneDRR, drr, makePair
from .quality import MetricConfig, formatTable, getMaxScales
from .trainer import (
    SplitSpec,
    TrainConfig,
    evaluate,
    evaluateBaseline,
    loadDataset,
    saveDataset,
    splitDataset,
    train,
)
from .unet import (
    MODEL_GRADCHECK_TOLERANCE,
    UNetConfig,
    build,
    gradCheckModel,
    loadWeights,
    saveWeights,
)
from .volume import (
    ANNOTATION_SUFFIX,
    BONE_WINDOW,
    VOLUME_SUFFIX,
    PhantomSpec,
    generatePhantom,
    loadAnnotations,
    loadVolume,
    saveAnnotations,
    saveVolume,
)
from .weights import MANIFEST_SUFFIX

logger = logging.getLogger(__name__)

RUN_SUFFIX = '.run.json'
HISTORY_SUFFIX = '.history.jsonl'
DATASET_NAME = 'dataset.json'
GRADCHECK_RUN_NAME = 'gradcheck' + RUN_SUFFIX
# Augmentation options, by AugmentConfig field.
_AUGMENT_FIELD_LIST = (
    'horizontal_flip',
    'noise_std',
    'bias_range',
    'zoom_range',
    'sharpen_alpha',
    'sharpen_prob',
    'rotation_deg',
    'shift_range',
)

class RunManifest:
    """
    What a command run did: command name, argument vector (enough to
    replay it), resolved configuration, seed, input and output paths and
    package version.
    """
    def __init__(self, command, argv, config, seed, inputs, outputs, version=__version__):
        self.command = command
        self.argv = list(argv)
        self.config = config
        self.seed = seed
        self.inputs = list(inputs)
        self.outputs = list(outputs)
        self.version = version

    def asDict(self):
        return {
            'command': self.command,
            'argv': self.argv,
            'config': self.config,
            'seed': self.seed,
            'inputs': self.inputs,
            'outputs': self.outputs,
            'version': self.version,
        }

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as manifest_file:
            json.dump(self.asDict(), manifest_file, indent=1)
            manifest_file.write('\n')
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding='utf-8') as manifest_file:
                value = json.load(manifest_file)
        except FileNotFoundError:
            raise FormatError('No such file: %r' % (path, ), field='manifest') from None
        except ValueError as exc:
            raise FormatError(
                'Malformed run manifest %r: %s' % (path, exc),
                field='manifest',
            ) from None
        try:
            return cls(**value)
        except TypeError:
            raise FormatError(
                'Malformed run manifest %r' % (path, ),
                field='manifest',
            ) from None

def _getRunPath(path, suffix):
    directory, name = splitName(path, suffix)
    return os.path.join(directory, name + RUN_SUFFIX)

def _getConfig(cls, args, **kw):
    """
    Build a cls Config from same-named args attributes, updated by kw.
    """
    value_dict = {
        name: getattr(args, name)
        for name in cls.getDefaults()
        if hasattr(args, name)
    }
    value_dict.update(kw)
    return cls(**value_dict)

def _getProjectorConfig(args):
    return _getConfig(ProjectorConfig, args)

def _saveOutputImage(img, args):
    path = saveImage(img, args.output)
    if args.pgm:
        exportPGM(img, args.pgm)
    return [path] + ([args.pgm] if args.pgm else [])

def cmdPhantom(args):
    """
    Write args.count phantoms, seeded seed..seed+count-1, as
    <name>_<index>.vol.json and <name>_<index>.nod.json in the output
    directory.
    """
    os.makedirs(args.output, exist_ok=True)
    output_list = []
    spec_list = []
    for index in range(args.count):
        spec = _getConfig(PhantomSpec, args, seed=args.seed + index)
        vol, annotation_list = generatePhantom(spec)
        base = os.path.join(args.output, '%s_%04i' % (args.name, index))
        output_list.append(saveVolume(vol, base + VOLUME_SUFFIX))
        output_list.append(saveAnnotations(annotation_list, base + ANNOTATION_SUFFIX))
        spec_list.append(spec.asDict())
        logger.debug('phantom %i: %i nodules', index, len(annotation_list))
    return {
        'config': {'phantoms': spec_list},
        'inputs': [args.spec] if args.spec else [],
        'outputs': output_list,
        'manifest': os.path.join(args.output, args.name + RUN_SUFFIX),
    }

def cmdDRR(args):
    """
    Render a volume (or its bone-windowed version) to a normalized
    radiograph, optionally with the raw intensities as a diagnostic.
    """
    cfg = _getProjectorConfig(args)
    vol = loadVolume(args.volume)
    lo, hi = args.window
    if args.bone:
        render = lambda raw: boneDRR(vol, cfg, lo, hi, raw=raw)
    else:
        render = lambda raw: drr(vol, cfg, raw=raw)
    output_list = _saveOutputImage(render(False), args)
    if args.raw:
        output_list.append(saveImage(render(True), args.raw))
    config = cfg.asDict()
    config['bone'] = args.bone
    config['window'] = [lo, hi]
    return {
        'config': config,
        'inputs': [args.volume],
        'outputs': output_list,
        'manifest': _getRunPath(args.output, IMAGE_SUFFIX),
    }

def cmdPairs(args):
    """
    Turn every volume of a directory into a training pair, and list them
    in <output>/dataset.json. A volume without annotation file gets an
    empty nodule mask.
    """
    cfg = _getProjectorConfig(args)
    lo, hi = args.window
    volume_list = sorted(glob.glob(os.path.join(args.volumes, '*' + VOLUME_SUFFIX)))
    if not volume_list:
        raise FormatError(
            'No %s file in %r' % (VOLUME_SUFFIX, args.volumes),
            field='volumes',
        )
    os.makedirs(args.output, exist_ok=True)
    input_list = []
    path_dict_list = []
    for volume_path in volume_list:
        directory, name = splitName(volume_path, VOLUME_SUFFIX)
        annotation_path = os.path.join(directory, name + ANNOTATION_SUFFIX)
        input_list.append(volume_path)
        if os.path.exists(annotation_path):
            annotation_list = loadAnnotations(annotation_path)
            input_list.append(annotation_path)
        else:
            annotation_list = []
        pair = makePair(loadVolume(volume_path), annotation_list, cfg, lo, hi)
        path_dict_list.append(savePair(pair, os.path.join(args.output, name)))
        logger.debug('pair %s written', name)
    dataset_path = saveDataset(os.path.join(args.output, DATASET_NAME), path_dict_list)
    config = cfg.asDict()
    config['window'] = [lo, hi]
    return {
        'config': config,
        'inputs': input_list,
        'outputs': [
            path
            for path_dict in path_dict_list
            for path in path_dict.values()
        ] + [dataset_path],
        'manifest': _getRunPath(dataset_path, '.json'),
    }

def _getTrainConfig(args):
    return _getConfig(
        TrainConfig,
        args,
        augment=_getConfig(AugmentConfig, args, seed=args.seed),
        prefetch=not args.deterministic,
    )

def _getUNetConfig(args):
    return _getConfig(
        UNetConfig,
        args,
        noise_std=args.input_noise_std,
        init_seed=args.seed,
    )

def cmdTrain(args):
    """
    Split a dataset, train a freshly built model on it and store its
    weights, the loss history and the split.
    """
    train_cfg = _getTrainConfig(args)
    model_cfg = _getUNetConfig(args)
    split_spec = SplitSpec(fractions=args.split, seed=args.seed)
    loss_net = None
    if args.loss_network:
        loss_net = loadLossNetwork(args.loss_network)
    directory, name = splitName(args.output, MANIFEST_SUFFIX)
    base = os.path.join(directory, name)
    split_path_list = [
        saveDataset('%s.%s.json' % (base, role), item_list)
        for role, item_list in zip(
            ('train', 'val', 'test'),
            splitDataset(loadDataset(args.dataset), split_spec),
        )
    ]
    train_items, val_items, _ = (loadDataset(x) for x in split_path_list)
    history_path = base + HISTORY_SUFFIX
    # Appended to by train, one line per epoch.
    open(history_path, 'w').close() # pylint: disable=consider-using-with
    model = build(model_cfg)
    train(
        model,
        (train_items, val_items),
        train_cfg,
        loss_net=loss_net,
        history_path=history_path,
    )
    weight_path = saveWeights(model, base + MANIFEST_SUFFIX)
    return {
        'config': {
            'train': train_cfg.asDict(),
            'model': model_cfg.asDict(),
            'split': split_spec.asDict(),
        },
        'inputs': [args.dataset] + ([args.loss_network] if args.loss_network else []),
        'outputs': [weight_path, history_path] + split_path_list,
        'manifest': base + RUN_SUFFIX,
    }

def cmdPredict(args):
    """
    Predict the bone image of a radiograph.
    """
    model = loadWeights(args.model)
    bone = predictBone(model, loadImage(args.image), args.preprocess)
    return {
        'config': {'preprocess': args.preprocess, 'model': model.config.asDict()},
        'inputs': [args.model, args.image],
        'outputs': _saveOutputImage(bone, args),
        'manifest': _getRunPath(args.output, IMAGE_SUFFIX),
    }

def cmdEnhance(args):
    """
    Enhance a radiograph by adding its weighted predicted bone image.
    Non unit-range inputs are min-max normalized first.
    """
    cfg = _getConfig(FusionConfig, args)
    model = loadWeights(args.model)
    cxr = loadImage(args.image)
    if cxr.range_tag != RANGE_UNIT:
        cxr = minmaxNormalize(cxr)
    enhanced = fuse(cxr, predictBone(model, cxr, args.preprocess), cfg)
    config = cfg.asDict()
    config['preprocess'] = args.preprocess
    config['model'] = model.config.asDict()
    return {
        'config': config,
        'inputs': [args.model, args.image],
        'outputs': _saveOutputImage(enhanced, args),
        'manifest': _getRunPath(args.output, IMAGE_SUFFIX),
    }

def cmdEval(args):
    """
    Score a model (and/or the identity baseline) on a dataset. Prints a
    text table, writes the reports as JSON.
    """
    if args.model is None and not args.baseline:
        raise ConfigError('nothing to evaluate: give --model or --baseline', field='model')
    items = loadDataset(args.dataset)
    scales = args.scales
    if scales is None:
        if items:
            scales = getMaxScales(loadImage(items[0]['source']).shape)
        else:
            scales = MetricConfig.getDefaults()['scales']
        logger.info('MS-SSIM over %i scales', scales)
    cfg = _getConfig(MetricConfig, args, scales=scales)
    report_list = []
    input_list = [args.dataset]
    if args.baseline:
        report_list.append(evaluateBaseline(items, cfg))
    if args.model is not None:
        input_list.append(args.model)
        report_list.append(evaluate(
            loadWeights(args.model),
            items,
            cfg,
            args.preprocess,
            label=os.path.basename(splitName(args.model, MANIFEST_SUFFIX)[1]),
        ))
    with open(args.output, 'w', encoding='utf-8') as report_file:
        json.dump(
            {'reports': [x.asDict() for x in report_list]},
            report_file,
            indent=1,
            allow_nan=False,
        )
        report_file.write('\n')
    print(formatTable(report_list))
    config = cfg.asDict()
    config['preprocess'] = args.preprocess
    return {
        'config': config,
        'inputs': input_list,
        'outputs': [args.output],
        'manifest': _getRunPath(args.output, '.json'),
    }

def cmdGradCheck(args):
    """
    Finite-difference check of every autodiff operation, then of a whole
    model. Prints one line per check; fails if any exceeds its tolerance.
    """
    result_list = []
    for name, closure, input_list in iterGradCheckSuite(args.seed):
        result_list.append((name, gradCheck(closure, input_list), OP_TOLERANCE))
    if args.toy:
        model_cfg = UNetConfig.TOY
    else:
        model_cfg = UNetConfig(input_size=16, base_filters=2, depth=2)
    result_list.append((
        'unet (%ix%i, %i filters, depth %i)' % (
            model_cfg.input_size,
            model_cfg.input_size,
            model_cfg.base_filters,
            model_cfg.depth,
        ),
        gradCheckModel(model_cfg, sample=args.sample, seed=args.seed),
        MODEL_GRADCHECK_TOLERANCE,
    ))
    failed = False
    for name, error, tolerance in result_list:
        passed = error < tolerance
        failed |= not passed
        print('%s %-40s max relative error %.3g (tolerance %g)' % (
            'PASS' if passed else 'FAIL',
            name,
            error,
            tolerance,
        ))
    outputs = []
    if args.report:
        with open(args.report, 'w', encoding='utf-8') as report_file:
            json.dump(
                [
                    {'name': name, 'error': error, 'tolerance': tolerance}
                    for name, error, tolerance in result_list
                ],
                report_file,
                indent=1,
            )
            report_file.write('\n')
        outputs.append(args.report)
    return {
        'config': {'sample': args.sample, 'toy': args.toy},
        'inputs': [],
        'outputs': outputs,
        'manifest': (
            _getRunPath(args.report, '.json') if args.report else GRADCHECK_RUN_NAME
        ),
        'failed': failed,
    }

class _JSONAction(argparse.Action):
    """
    Store an option value parsed as JSON.
    """
    def __call__(self, parser, namespace, values, option_string=None):
        try:
            value = json.loads(values)
        except ValueError:
            parser.error('%s: invalid JSON %r' % (option_string, values))
        setattr(namespace, self.dest, value)

def _addProjectorArguments(parser):
    defaults = ProjectorConfig.getDefaults()
    parser.add_argument(
        '--mu-water',
        dest='mu_water',
        type=float,
        default=defaults['mu_water'],
        help='Linear attenuation of water, in cm^-1',
    )
    parser.add_argument(
        '--beta',
        type=float,
        default=defaults['beta'],
        help='Exposure factor',
    )
    parser.add_argument(
        '--no-clamp-air',
        dest='clamp_air',
        action='store_false',
        help='Let voxels below -1000 HU contribute negative attenuation',
    )
    parser.add_argument(
        '--window',
        nargs=2,
        type=int,
        metavar=('LO', 'HI'),
        default=list(BONE_WINDOW),
        help='Bone window, in HU, bounds included',
    )

def _addOutputArguments(parser):
    parser.add_argument('output', help='Output image header path (.img.json)')
    parser.add_argument('--pgm', help='Also export a 16-bit PGM to this path')

def _addPhantomParser(subparsers, formatter_class):
    defaults = PhantomSpec.getDefaults()
    parser = subparsers.add_parser(
        'phantom',
        help='Generate thorax phantom volumes',
        formatter_class=formatter_class,
    )
    parser.add_argument('output', help='Output directory')
    parser.add_argument(
        '--spec',
        help='PhantomSpec JSON file, with the field names as keys',
    )
    parser.add_argument('--count', type=int, default=1, help='Number of phantoms')
    parser.add_argument('--name', default='phantom', help='Output file name prefix')
    parser.add_argument(
        '--dims',
        nargs=3,
        type=int,
        metavar=('X', 'Y', 'Z'),
        default=list(defaults['dims']),
        help='Volume size in voxels, Y being the projection axis',
    )
    parser.add_argument(
        '--spacing',
        dest='spacing_mm',
        nargs=3,
        type=float,
        metavar=('SX', 'SY', 'SZ'),
        default=list(defaults['spacing_mm']),
        help='Voxel size in millimeters',
    )
    for name in ('body', 'lungs', 'spine'):
        parser.add_argument(
            '--no-' + name,
            dest=name,
            action='store_false',
            help='Omit the %s' % (name, ),
        )
    parser.add_argument(
        '--ribs',
        dest='rib_count',
        type=int,
        default=defaults['rib_count'],
        help='Number of rib arcs',
    )
    parser.add_argument(
        '--nodules',
        dest='nodule_count',
        type=int,
        default=defaults['nodule_count'],
        help='Number of randomly placed nodules',
    )
    parser.add_argument(
        '--nodule-radius',
        dest='nodule_radius_range',
        nargs=2,
        type=float,
        metavar=('LO', 'HI'),
        default=list(defaults['nodule_radius_range']),
        help='Random nodule radius range, in voxels',
    )
    for name in ('soft_tissue_hu', 'lung_hu', 'bone_hu', 'nodule_hu'):
        parser.add_argument(
            '--' + name.replace('_', '-'),
            dest=name,
            type=int,
            default=defaults[name],
            help='Material value, in HU',
        )
    # Only settable from --spec or --config files.
    parser.set_defaults(nodule_list=[])
    parser.set_defaults(func=cmdPhantom)

def _addDRRParser(subparsers, formatter_class):
    parser = subparsers.add_parser(
        'drr',
        help='Render a radiograph from a volume',
        formatter_class=formatter_class,
    )
    parser.add_argument('volume', help='Volume header path (.vol.json)')
    _addOutputArguments(parser)
    _addProjectorArguments(parser)
    parser.add_argument(
        '--bone',
        action='store_true',
        help='Render the bone-windowed volume',
    )
    parser.add_argument(
        '--raw',
        help='Also write un-normalized intensities to this image path',
    )
    parser.set_defaults(func=cmdDRR)

def _addPairsParser(subparsers, formatter_class):
    parser = subparsers.add_parser(
        'pairs',
        help='Build training pairs from a directory of volumes',
        formatter_class=formatter_class,
    )
    parser.add_argument('volumes', help='Directory of .vol.json (and .nod.json) files')
    parser.add_argument('output', help='Output directory, receiving ' + DATASET_NAME)
    _addProjectorArguments(parser)
    parser.set_defaults(func=cmdPairs)

def _addModelArguments(parser):
    defaults = UNetConfig.getDefaults()
    parser.add_argument(
        '--input-size',
        dest='input_size',
        type=int,
        default=defaults['input_size'],
        help='Model input height and width',
    )
    parser.add_argument(
        '--base-filters',
        dest='base_filters',
        type=int,
        default=defaults['base_filters'],
        help='Channels of the first convolution',
    )
    parser.add_argument(
        '--depth',
        type=int,
        default=defaults['depth'],
        help='Number of U-Net levels',
    )
    parser.add_argument(
        '--dilation',
        dest='bottleneck_dilation',
        type=int,
        default=defaults['bottleneck_dilation'],
        help='Bottleneck convolution dilation',
    )
    parser.add_argument(
        '--input-noise',
        dest='input_noise_std',
        type=float,
        default=defaults['noise_std'],
        help='Training input noise standard deviation',
    )
    parser.add_argument(
        '--dtype',
        choices=('float32', 'float64'),
        default=defaults['dtype'],
        help='Model floating point type',
    )

def _addTrainParser(subparsers, formatter_class):
    defaults = TrainConfig.getDefaults()
    augment_defaults = AugmentConfig.getDefaults()
    parser = subparsers.add_parser(
        'train',
        help='Train a bone extraction model',
        formatter_class=formatter_class,
    )
    parser.add_argument('dataset', help='Dataset manifest (' + DATASET_NAME + ')')
    parser.add_argument('output', help='Output weights manifest path (.wts.json)')
    parser.add_argument(
        '--preset',
        choices=sorted(TrainConfig.PRESET_DICT),
        default='default',
        help='Training recipe providing defaults for the options below',
    )
    parser.add_argument(
        '--split',
        nargs=3,
        type=float,
        metavar=('TRAIN', 'VAL', 'TEST'),
        default=list(SplitSpec.getDefaults()['fractions']),
        help='Dataset split fractions',
    )
    parser.add_argument(
        '--epochs',
        type=int,
        default=defaults['epochs'],
        help='Passes over the training set',
    )
    parser.add_argument(
        '--batch-size',
        dest='batch_size',
        type=int,
        default=defaults['batch_size'],
        help='Pairs per optimization step',
    )
    parser.add_argument(
        '--learning-rate',
        dest='learning_rate',
        type=float,
        default=defaults['learning_rate'],
        help='ADAM step size',
    )
    for name in ('beta1', 'beta2', 'epsilon'):
        parser.add_argument(
            '--adam-' + name,
            dest=name,
            type=float,
            default=defaults[name],
            help='ADAM %s' % (name, ),
        )
    parser.add_argument(
        '--loss',
        choices=LOSS.values(),
        default=defaults['loss'],
        help='Reconstruction loss',
    )
    parser.add_argument(
        '--loss-mix',
        dest='loss_mix',
        action=_JSONAction,
        default=defaults['loss_mix'],
        help='JSON {loss: coefficient} weighted sum, overriding --loss',
    )
    parser.add_argument(
        '--nodule-weight',
        dest='nodule_weight',
        type=float,
        default=defaults['nodule_weight'],
        help='Weighted L1 extra weight inside nodule masks',
    )
    parser.add_argument(
        '--loss-network',
        dest='loss_network',
        help='Loss network weights manifest for the perceptual loss '
        '(default: seeded random weights)',
    )
    parser.add_argument(
        '--preprocess',
        choices=PREPROCESS.values(),
        default=defaults['preprocess'],
        help='Source preprocessing',
    )
    for name in _AUGMENT_FIELD_LIST:
        parser.add_argument(
            '--augment-' + name.replace('_', '-'),
            dest=name,
            type=float,
            default=augment_defaults[name],
            help='Augmentation: %s' % (name.replace('_', ' '), ),
        )
    _addModelArguments(parser)
    parser.set_defaults(func=cmdTrain)

def _addInferenceParser(subparsers, formatter_class, name, help_text, func):
    parser = subparsers.add_parser(
        name,
        help=help_text,
        formatter_class=formatter_class,
    )
    parser.add_argument('model', help='Weights manifest path (.wts.json)')
    parser.add_argument('image', help='Input image header path (.img.json)')
    _addOutputArguments(parser)
    parser.add_argument(
        '--preprocess',
        choices=PREPROCESS.values(),
        default=PREPROCESS_STANDARDIZE,
        help='Preprocessing the model was trained with',
    )
    parser.set_defaults(func=func)
    return parser

def _addEvalParser(subparsers, formatter_class):
    defaults = MetricConfig.getDefaults()
    parser = subparsers.add_parser(
        'eval',
        help='Compute RMSE, PSNR, SSIM and MS-SSIM on a dataset',
        formatter_class=formatter_class,
    )
    parser.add_argument('dataset', help='Dataset manifest')
    parser.add_argument('output', help='Output JSON report path')
    parser.add_argument('--model', help='Weights manifest to evaluate')
    parser.add_argument(
        '--baseline',
        action='store_true',
        help='Also evaluate sources used as predictions',
    )
    parser.add_argument(
        '--preprocess',
        choices=PREPROCESS.values(),
        default=PREPROCESS_STANDARDIZE,
        help='Preprocessing the model was trained with',
    )
    parser.add_argument(
        '--dynamic-range',
        dest='dynamic_range',
        type=float,
        default=defaults['dynamic_range'],
        help='Pixel scale L of [0, 1] images',
    )
    parser.add_argument(
        '--scales',
        type=int,
        default=None,
        help='MS-SSIM scales; images need 11 * 2^(scales - 1) pixels per side. '
        'Default: as many as the first image allows, at most 5',
    )
    parser.set_defaults(func=cmdEval)

def _addGradCheckParser(subparsers, formatter_class):
    parser = subparsers.add_parser(
        'gradcheck',
        help='Check gradients against finite differences',
        formatter_class=formatter_class,
    )
    parser.add_argument(
        '--sample',
        type=int,
        default=4,
        help='Coordinates checked per model parameter tensor',
    )
    parser.add_argument(
        '--toy',
        action='store_true',
        help='Check the 64x64 toy model instead of a minimal one',
    )
    parser.add_argument(
        '--report',
        help='Also write results to this JSON file. The run manifest goes '
        'next to it, or to ' + GRADCHECK_RUN_NAME + ' in the current directory',
    )
    parser.set_defaults(func=cmdGradCheck)

def getArgumentParser():
    """
    Create the osteoforge argument parser.
    Returns (parser, {command: subparser}).
    """
    formatter_class = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog='osteoforge',
        description='Synthetic bone X-ray generation, bone extraction '
        'training and radiograph enhancement.',
        epilog='Environment: OSTEOFORGE_THREADS caps worker threads.',
        formatter_class=formatter_class,
    )
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('--seed', type=int, default=0, help='Seed of all random draws')
    parser.add_argument(
        '--config',
        help='JSON file of option values, keyed by option destination',
    )
    parser.add_argument(
        '--deterministic',
        action='store_true',
        help='Run everything sequentially',
    )
    parser.add_argument(
        '-v', '--verbose',
        action='store_true',
        help='Log debug messages',
    )
    parser.add_argument(
        '--replay',
        metavar='RUN_MANIFEST',
        help='Re-run the command recorded in a run manifest',
    )
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    _addPhantomParser(subparsers, formatter_class)
    _addDRRParser(subparsers, formatter_class)
    _addPairsParser(subparsers, formatter_class)
    _addTrainParser(subparsers, formatter_class)
    _addInferenceParser(
        subparsers, formatter_class, 'predict', 'Predict a bone image', cmdPredict,
    )
    enhance_parser = _addInferenceParser(
        subparsers, formatter_class, 'enhance', 'Enhance a radiograph', cmdEnhance,
    )
    fusion_defaults = FusionConfig.getDefaults()
    enhance_parser.add_argument(
        '--weight',
        type=float,
        default=fusion_defaults['weight'],
        help='Bone image weight',
    )
    enhance_parser.add_argument(
        '--no-clamp',
        dest='clamp',
        action='store_false',
        help='Do not clamp the result to [0, 1]',
    )
    _addEvalParser(subparsers, formatter_class)
    _addGradCheckParser(subparsers, formatter_class)
    return parser, subparsers.choices

def _getDestSet(parser):
    # pylint: disable=protected-access
    return {x.dest for x in parser._actions}.union(parser._defaults)
    # pylint: enable=protected-access

def _readJSONObject(path, field):
    try:
        with open(path, encoding='utf-8') as json_file:
            value = json.load(json_file)
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (path, ), field=field) from None
    except ValueError as exc:
        raise FormatError('Malformed JSON in %r: %s' % (path, exc), field=field) from None
    if not isinstance(value, dict):
        raise FormatError('%r must hold a JSON object' % (path, ), field=field)
    return value

def _flattenPreset(value_dict):
    result = {}
    for key, value in value_dict.items():
        if isinstance(value, dict):
            result.update(value)
        else:
            result[key] = value
    return result

def _applyDefaults(parser, subparser_dict, argv):
    """
    Pre-parse --preset, --spec and --config, and turn their values into
    parser defaults, so explicit flags keep precedence.
    """
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument('--config')
    pre_parser.add_argument('--preset')
    pre_parser.add_argument('--spec')
    known, _ = pre_parser.parse_known_args(argv)
    layer_list = []
    if known.preset:
        try:
            preset = TrainConfig.PRESET_DICT[known.preset]
        except KeyError:
            # Rejected by the full parser with a usage error.
            preset = {}
        layer_list.append(('preset', _flattenPreset(preset)))
    if known.spec:
        layer_list.append(('spec', _readJSONObject(known.spec, 'spec')))
    if known.config:
        layer_list.append(('config', _readJSONObject(known.config, 'config')))
    parser_list = [parser] + list(subparser_dict.values())
    dest_set_list = [_getDestSet(x) for x in parser_list]
    for field, value_dict in layer_list:
        for key, value in value_dict.items():
            if key in ('func', 'command', 'config', 'replay'):
                raise ConfigError('%r cannot be set from a file' % (key, ), field=key)
            matched = False
            for item_parser, dest_set in zip(parser_list, dest_set_list):
                if key in dest_set:
                    item_parser.set_defaults(**{key: value})
                    matched = True
            if not matched:
                raise ConfigError(
                    'Unknown option %r in %s file' % (key, field),
                    field=key,
                )

def _setupLogging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s',
    )

def run(argv):
    """
    Run one command. Returns its exit status.
    Raises OsteoForgeError on failure.
    """
    parser, subparser_dict = getArgumentParser()
    _applyDefaults(parser, subparser_dict, argv)
    args = parser.parse_args(argv)
    if args.replay:
        if args.command:
            parser.error('--replay does not take a command')
        manifest = RunManifest.load(args.replay)
        logger.info('replaying %s from %s', manifest.command, args.replay)
        return run(manifest.argv)
    if not args.command:
        parser.error('a command is required')
    result = args.func(args)
    if result['manifest']:
        resolved = dict(result['config'])
        resolved['options'] = {
            key: value
            for key, value in vars(args).items()
            if key != 'func'
        }
        RunManifest(
            args.command,
            argv,
            resolved,
            args.seed,
            result['inputs'],
            result['outputs'],
        ).save(result['manifest'])
    return 1 if result.get('failed') else 0

def main(argv=None):
    """
    Console entry point.
    """
    if argv is None:
        argv = sys.argv[1:]
    _setupLogging('-v' in argv or '--verbose' in argv)
    try:
        return run(argv)
    except OsteoForgeError as exc:
        print(json.dumps(exc.asDict()), file=sys.stderr)
        return 1

if __name__ == '__main__':
    sys.exit(main())
