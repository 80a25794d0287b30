#!/usr/bin/env node
/** Command-line mirror of ExportSpec. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { Split } from './cifar';
import { DEFAULT_SPEC, exportActivations } from './export';
import { MODELS } from './models';

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .scriptName('ensvis-export')
    .usage('$0 --model vgg16 --layers 5,6,7 --data-dir D --out-dir F')
    .option('model', {
      type: 'string',
      demandOption: true,
      choices: Object.keys(MODELS),
    })
    .option('layers', {
      type: 'string',
      demandOption: true,
      describe: 'comma-separated layer indices, e.g. 5,6,7',
    })
    .option('data-dir', { type: 'string', demandOption: true })
    .option('out-dir', { type: 'string', demandOption: true })
    .option('split', {
      type: 'string',
      default: 'both',
      choices: ['train', 'test', 'both'],
    })
    .option('batch-size', { type: 'number', default: DEFAULT_SPEC.batchSize })
    .option('subset', {
      type: 'number',
      default: DEFAULT_SPEC.subset,
      describe: 'first N images per class per split (0 = all)',
    })
    .option('seed', { type: 'number', default: DEFAULT_SPEC.seed })
    .option('resize', {
      type: 'number',
      describe: 'input side length (default: model native resolution)',
    })
    .option('weights', {
      type: 'string',
      describe: 'optional file:// URL of a tfjs-layers model.json checkpoint',
    })
    .strict()
    .help()
    .parse();

  const splits: Split[] =
    argv.split === 'both' ? ['train', 'test'] : [argv.split as Split];
  try {
    const written = await exportActivations({
      model: argv.model,
      layers: argv.layers.split(',').map((s) => parseInt(s.trim(), 10)),
      dataDir: argv['data-dir'],
      outDir: argv['out-dir'],
      splits,
      batchSize: argv['batch-size'],
      subset: argv.subset,
      seed: argv.seed,
      resize: argv.resize,
      weightsPath: argv.weights,
    });
    for (const path of written) console.log(path);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
