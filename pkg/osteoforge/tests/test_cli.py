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
import contextlib
import glob
import io
import json
import os
import tempfile
from osteoforge.cli import RunManifest, getArgumentParser, main as cliMain
from osteoforge.image import TrainingPair, loadImage, loadPair, savePair
from osteoforge.trainer import loadDataset, saveDataset
from osteoforge.unet import build, loadWeights
from osteoforge.volume import loadAnnotations, loadVolume
from .common import main

PHANTOM_ARGV = ['phantom', '--dims', '16', '16', '16', '--count', '2', '--nodule-radius', '1', '1.5']
TRAIN_ARGV = [
    '--input-size', '16',
    '--base-filters', '2',
    '--depth', '2',
    '--batch-size', '1',
    '--split', '0.5', '0.5', '0',
]

def _run(argv):
    """
    Call the command line entry point, returning (status, stdout, stderr).
    """
    stdout = io.StringIO()
    stderr = io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        status = cliMain(list(argv))
    return status, stdout.getvalue(), stderr.getvalue()

def _read(path):
    with open(path, 'rb') as data_file:
        return data_file.read()

def _makeDataset(directory):
    """
    Generate two phantoms, then their pairs. Returns the dataset path.
    """
    volume_directory = os.path.join(directory, 'volumes')
    pair_directory = os.path.join(directory, 'pairs')
    assert _run(PHANTOM_ARGV[:1] + [volume_directory] + PHANTOM_ARGV[1:])[0] == 0
    assert _run(['pairs', volume_directory, pair_directory])[0] == 0
    return os.path.join(pair_directory, 'dataset.json')

def testPhantom():
    with tempfile.TemporaryDirectory() as directory:
        status, _, _ = _run(['--seed', '5'] + PHANTOM_ARGV[:1] + [directory] + PHANTOM_ARGV[1:])
        assert status == 0
        assert sorted(os.listdir(directory)) == [
            'phantom.run.json',
            'phantom_0000.nod.json',
            'phantom_0000.vol.json',
            'phantom_0000.vol.raw',
            'phantom_0001.nod.json',
            'phantom_0001.vol.json',
            'phantom_0001.vol.raw',
        ]
        vol = loadVolume(os.path.join(directory, 'phantom_0001.vol.json'))
        assert vol.dims == (16, 16, 16)
        assert len(loadAnnotations(os.path.join(directory, 'phantom_0000.nod.json'))) == 1
        manifest = RunManifest.load(os.path.join(directory, 'phantom.run.json'))
        assert manifest.command == 'phantom'
        assert manifest.seed == 5
        assert [x['seed'] for x in manifest.config['phantoms']] == [5, 6]
        assert len(manifest.outputs) == 4

def testPhantomSpecFile():
    with tempfile.TemporaryDirectory() as directory:
        spec_path = os.path.join(directory, 'spec.json')
        with open(spec_path, 'w') as spec_file:
            json.dump({
                'dims': [12, 12, 12],
                'nodule_count': 0,
                'nodule_list': [{'center_vox': [6, 6, 6], 'radii_vox': [2, 2, 2]}],
                'rib_count': 3,
            }, spec_file)
        output = os.path.join(directory, 'out')
        # Flags override the spec file.
        assert _run(['phantom', output, '--spec', spec_path, '--ribs', '0'])[0] == 0
        manifest = RunManifest.load(os.path.join(output, 'phantom.run.json'))
        spec = manifest.config['phantoms'][0]
        assert spec['dims'] == [12, 12, 12]
        assert spec['rib_count'] == 0
        assert manifest.inputs == [spec_path]
        annotation_list = loadAnnotations(os.path.join(output, 'phantom_0000.nod.json'))
        assert [x.center_vox for x in annotation_list] == [(6, 6, 6)]

def testDRRAndReplay():
    with tempfile.TemporaryDirectory() as directory:
        assert _run(PHANTOM_ARGV[:1] + [directory] + PHANTOM_ARGV[1:])[0] == 0
        volume_path = os.path.join(directory, 'phantom_0000.vol.json')
        output = os.path.join(directory, 'bone.img.json')
        pgm = os.path.join(directory, 'bone.pgm')
        raw = os.path.join(directory, 'bone_raw.img.json')
        status, _, _ = _run([
            'drr', volume_path, output, '--bone', '--pgm', pgm, '--raw', raw,
            '--beta', '0.05',
        ])
        assert status == 0
        image = loadImage(output)
        assert image.range_tag == 'unit' and image.shape == (16, 16)
        assert loadImage(raw).range_tag == 'raw'
        assert _read(pgm).startswith(b'P5\n16 16\n65535\n')
        run_path = os.path.join(directory, 'bone.run.json')
        manifest = RunManifest.load(run_path)
        assert manifest.config['beta'] == 0.05
        assert manifest.config['bone'] is True
        before = _read(os.path.join(directory, 'bone.img.raw'))
        os.unlink(output)
        assert _run(['--replay', run_path])[0] == 0
        assert _read(os.path.join(directory, 'bone.img.raw')) == before

def testConfigFile():
    with tempfile.TemporaryDirectory() as directory:
        assert _run(PHANTOM_ARGV[:1] + [directory] + PHANTOM_ARGV[1:])[0] == 0
        volume_path = os.path.join(directory, 'phantom_0000.vol.json')
        config_path = os.path.join(directory, 'config.json')
        with open(config_path, 'w') as config_file:
            json.dump({'beta': 0.5, 'mu_water': 0.3}, config_file)
        output = os.path.join(directory, 'a.img.json')
        assert _run(['--config', config_path, 'drr', volume_path, output, '--beta', '0.1'])[0] == 0
        config = RunManifest.load(os.path.join(directory, 'a.run.json')).config
        assert (config['beta'], config['mu_water']) == (0.1, 0.3)
        with open(config_path, 'w') as config_file:
            json.dump({'bogus': 1}, config_file)
        status, _, stderr = _run(['--config', config_path, 'drr', volume_path, output])
        assert status == 1
        error = json.loads(stderr.strip().splitlines()[-1])
        assert (error['error'], error['field']) == ('ConfigError', 'bogus')

def testErrorReport():
    with tempfile.TemporaryDirectory() as directory:
        status, _, stderr = _run([
            'drr',
            os.path.join(directory, 'missing.vol.json'),
            os.path.join(directory, 'out.img.json'),
        ])
        assert status == 1
        error = json.loads(stderr.strip().splitlines()[-1])
        assert error['error'] == 'FormatError'
        assert error['field'] == 'header'
        assert error['message']

def testPairs():
    with tempfile.TemporaryDirectory() as directory:
        dataset_path = _makeDataset(directory)
        item_list = loadDataset(dataset_path)
        assert len(item_list) == 2
        pair = loadPair(item_list[0])
        assert pair.shape == (16, 16)
        assert pair.nodule_mask.pixels.sum() > 0
        manifest = RunManifest.load(os.path.join(directory, 'pairs', 'dataset.run.json'))
        assert manifest.command == 'pairs'
        assert len(manifest.inputs) == 4
        status, _, _ = _run(['pairs', os.path.join(directory, 'pairs'), os.path.join(directory, 'x')])
        assert status == 1

def testTrainZeroEpochs():
    with tempfile.TemporaryDirectory() as directory:
        dataset_path = _makeDataset(directory)
        model_path = os.path.join(directory, 'model.wts.json')
        status, _, _ = _run(['--seed', '2', '--deterministic', 'train', dataset_path, model_path, '--epochs', '0'] + TRAIN_ARGV)
        assert status == 0
        model = loadWeights(model_path)
        assert model.config.init_seed == 2
        assert model.config.input_size == 16
        initial = build(model.config).getSnapshot()
        for name, value in model.getSnapshot().items():
            assert (value == initial[name]).all(), name
        for role, count in (('train', 1), ('val', 1), ('test', 0)):
            assert len(loadDataset(os.path.join(directory, 'model.%s.json' % (role, )))) == count
        assert _read(os.path.join(directory, 'model.history.jsonl')) == b''
        manifest = RunManifest.load(os.path.join(directory, 'model.run.json'))
        assert manifest.config['train']['epochs'] == 0
        assert manifest.config['train']['prefetch'] is False

def testTrainDeterministic():
    with tempfile.TemporaryDirectory() as directory:
        dataset_path = _makeDataset(directory)
        blob_list = []
        for name in ('a', 'b'):
            model_path = os.path.join(directory, name + '.wts.json')
            argv = ['--deterministic', 'train', dataset_path, model_path, '--epochs', '2', '--preset', 'v1']
            assert _run(argv + TRAIN_ARGV)[0] == 0
            blob_list.append(_read(os.path.join(directory, name + '.wts.raw')))
            with open(os.path.join(directory, name + '.history.jsonl')) as history_file:
                assert len(history_file.readlines()) == 2
        assert blob_list[0] == blob_list[1]
        manifest = RunManifest.load(os.path.join(directory, 'a.run.json'))
        assert manifest.config['train']['learning_rate'] == 1e-4
        assert manifest.config['train']['preprocess'] == 'he_clahe'
        assert manifest.config['train']['epochs'] == 2

def testPredictEnhanceEval():
    with tempfile.TemporaryDirectory() as directory:
        dataset_path = _makeDataset(directory)
        model_path = os.path.join(directory, 'model.wts.json')
        assert _run(['--deterministic', 'train', dataset_path, model_path, '--epochs', '1'] + TRAIN_ARGV)[0] == 0
        image_path = loadDataset(dataset_path)[0]['source']
        bone_path = os.path.join(directory, 'bone.img.json')
        assert _run(['predict', model_path, image_path, bone_path])[0] == 0
        bone = loadImage(bone_path)
        assert bone.range_tag == 'unit' and bone.shape == (16, 16)
        enhanced_path = os.path.join(directory, 'enhanced.img.json')
        assert _run(['enhance', model_path, image_path, enhanced_path, '--weight', '0'])[0] == 0
        assert loadImage(enhanced_path).pixels.tolist() == loadImage(image_path).pixels.tolist()
        report_path = os.path.join(directory, 'report.json')
        status, stdout, _ = _run([
            'eval', dataset_path, report_path, '--model', model_path, '--baseline', '--scales', '1',
        ])
        assert status == 0
        line_list = stdout.strip().splitlines()
        assert line_list[0].split()[0] == 'Method'
        assert [x.split()[0] for x in line_list[1:]] == ['identity', 'model']
        with open(report_path) as report_file:
            report_list = json.load(report_file)['reports']
        assert [x['count'] for x in report_list] == [2, 2]
        status, _, stderr = _run(['eval', dataset_path, report_path])
        assert status == 1
        assert json.loads(stderr.strip().splitlines()[-1])['field'] == 'model'

def testEvalIdentityDataset():
    with tempfile.TemporaryDirectory() as directory:
        dataset_path = _makeDataset(directory)
        path_dict_list = []
        for index, item in enumerate(loadDataset(dataset_path)):
            pair = loadPair(item)
            path_dict_list.append(savePair(
                TrainingPair(pair.target, pair.target, pair.nodule_mask),
                os.path.join(directory, 'same%i' % (index, )),
            ))
        same_path = saveDataset(os.path.join(directory, 'same.json'), path_dict_list)
        report_path = os.path.join(directory, 'same.report.json')
        # Scale count fits the 16x16 images when not given.
        assert _run(['eval', same_path, report_path, '--baseline'])[0] == 0
        with open(report_path) as report_file:
            aggregate = json.load(report_file)['reports'][0]['aggregate']
        assert aggregate['ssim']['mean'] == 1
        assert aggregate['rmse']['mean'] == 0
        assert aggregate['psnr'] == {'mean': None, 'std': 0.0, 'infinite': 2}
        manifest = RunManifest.load(os.path.join(directory, 'same.report.run.json'))
        assert manifest.config['scales'] == 1

def testGradCheck():
    with tempfile.TemporaryDirectory() as directory:
        report_path = os.path.join(directory, 'gradcheck.json')
        status, stdout, _ = _run(['gradcheck', '--sample', '2', '--report', report_path])
        assert status == 0, stdout
        line_list = stdout.strip().splitlines()
        assert line_list and all(x.startswith('PASS ') for x in line_list)
        with open(report_path) as report_file:
            result_list = json.load(report_file)
        assert len(result_list) == len(line_list)
        assert glob.glob(os.path.join(directory, '*.run.json'))

def testGradCheckWithoutReport():
    cwd = os.getcwd()
    with tempfile.TemporaryDirectory() as directory:
        os.chdir(directory)
        try:
            status, _, _ = _run(['gradcheck', '--sample', '1'])
        finally:
            os.chdir(cwd)
        assert status == 0
        manifest = RunManifest.load(os.path.join(directory, 'gradcheck.run.json'))
        assert manifest.command == 'gradcheck'
        assert manifest.outputs == []
        assert manifest.config['sample'] == 1

def testHelpShowsDefaults():
    parser, subparser_dict = getArgumentParser()
    assert set(subparser_dict) == {
        'phantom', 'drr', 'pairs', 'train', 'predict', 'enhance', 'eval', 'gradcheck',
    }
    help_text = subparser_dict['train'].format_help()
    for default in ('(default: 0.001)', '(default: 100)', '(default: standardize)'):
        assert default in help_text, default
    assert 'OSTEOFORGE_THREADS' in parser.format_help()

if __name__ == '__main__':
    main(globals())
