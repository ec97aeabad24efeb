#!/usr/bin/env node
/**
 * hypanom-extract: dump frozen-backbone feature maps for a directory of PNGs.
 *
 *   extract --images DIR --out DIR [--layers layer_2,layer_3] [--batch N]
 *           [--backbone wrn50|wrn50-lite] [--seed N] [--weights DIR]
 *           [--resize 224] [--split test]
 */
import { extract } from './extract'
import { PRESETS } from './backbone'

interface Opts {
  [key: string]: string
}

function parseArgs(argv: string[]): { command: string; opts: Opts } {
  const command = argv[0]
  const opts: Opts = {}
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i]
    if (!flag.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near '${flag}'`)
    }
    opts[flag.slice(2)] = argv[i + 1]
  }
  return { command, opts }
}

const USAGE = `usage: hypanom-extract extract --images DIR --out DIR
  [--layers layer_2,layer_3] [--batch 4] [--backbone ${Object.keys(PRESETS).join('|')}]
  [--seed 0] [--weights DIR] [--resize 224] [--split test]`

async function main(): Promise<number> {
  const argv = process.argv.slice(2)
  if (argv.length === 0 || argv[0] === '--help' || argv[0] === '-h') {
    console.log(USAGE)
    return 0
  }
  const { command, opts } = parseArgs(argv)
  if (command !== 'extract') {
    console.error(`unknown command '${command}'\n${USAGE}`)
    return 2
  }
  for (const required of ['images', 'out']) {
    if (!opts[required]) {
      console.error(`missing --${required}\n${USAGE}`)
      return 2
    }
  }
  const result = await extract({
    imagesDir: opts.images,
    outDir: opts.out,
    layers: (opts.layers ?? 'layer_2,layer_3').split(',').map((s) => s.trim()),
    batchSize: parseInt(opts.batch ?? '4', 10),
    resize: parseInt(opts.resize ?? '224', 10),
    backbone: opts.backbone ?? 'wrn50',
    seed: parseInt(opts.seed ?? '0', 10),
    weightsDir: opts.weights,
    split: opts.split ?? 'test',
  })
  console.log(`extracted ${result.records.length} images -> ${result.manifestPath}`)
  if (result.skipped.length > 0) console.log(`skipped ${result.skipped.length} unreadable file(s)`)
  return 0
}

main()
  .then((code) => process.exit(code))
  .catch((err) => {
    console.error(`error: ${(err as Error).message}`)
    process.exit(1)
  })
