/** Command line: features | activations, writing livmap input CSVs. */

import * as fs from 'node:fs'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import {
  ExtractionJob, exportAerialFeatures, exportGroundFeatures, exportSceneActivations,
} from './extract.js'

interface CommonArgs {
  imagesDir: string
  metadata: string
  backbone: string
  out: string
  batchSize: number
  device: string
}

function toJob(args: CommonArgs): ExtractionJob {
  if (args.device !== 'cpu') {
    throw new Error(`unsupported device ${args.device}; only cpu inference is available`)
  }
  if (args.batchSize < 1) {
    throw new Error('batch size must be >= 1')
  }
  fs.mkdirSync(args.out, { recursive: true })
  return {
    imagesDir: args.imagesDir,
    metadata: args.metadata,
    checkpoint: args.backbone,
    out: args.out,
    batchSize: args.batchSize,
  }
}

const common = {
  'images-dir': { type: 'string' as const, demandOption: true, describe: 'image directory' },
  metadata: { type: 'string' as const, demandOption: true, describe: 'metadata CSV' },
  backbone: {
    type: 'string' as const, demandOption: true,
    describe: 'checkpoint directory (model.json + weight shards)',
  },
  out: { type: 'string' as const, demandOption: true, describe: 'output directory' },
  'batch-size': { type: 'number' as const, default: 8 },
  device: { type: 'string' as const, default: 'cpu' },
}

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName('livmap-extract')
      .command(
        'features',
        'export backbone embeddings (ground_features.csv or aerial_features.csv)',
        y => y.options({
          ...common,
          target: { choices: ['ground', 'aerial'] as const, default: 'ground' as const },
        }),
        async args => {
          const job = toJob(args as unknown as CommonArgs)
          const count = (args.target === 'aerial')
            ? (await exportAerialFeatures(job)).length
            : (await exportGroundFeatures(job)).length
          console.log(`features[${args.target}]: ${count} rows -> ${job.out}`)
        })
      .command(
        'activations',
        'export 365-class scene activations (activations.csv)',
        y => y.options(common),
        async args => {
          const job = toJob(args as unknown as CommonArgs)
          const count = (await exportSceneActivations(job)).length
          console.log(`activations: ${count} rows -> ${job.out}`)
        })
      .demandCommand(1)
      .strict()
      .fail((msg, err) => { throw err ?? new Error(msg) })
      .parseAsync()
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url.endsWith(process.argv[1].split('/').pop() as string)
if (invokedDirectly) {
  main(hideBin(process.argv)).then(code => { process.exitCode = code })
}
