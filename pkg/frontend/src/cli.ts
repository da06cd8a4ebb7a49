#!/usr/bin/env node
/**
 * spoc-extract --images DIR --out DIR --model DIR [--size 586]
 *              [--layer NAME] [--stride 16] [--offset 8] [--rgb]
 *
 * Writes one SPOCFEAT feature file per decodable image plus manifest.json.
 * Exit codes: 0 success, 1 usage, 2 data error (missing model/images).
 */

import * as fs from 'node:fs'

import { extractDirectory } from './extractor.js'
import { MissingModelError } from './model.js'

interface CliArgs {
  images?: string
  out?: string
  model?: string
  size?: number
  layer?: string
  stride?: number
  offset?: number
  rgb?: boolean
}

function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {}
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    const next = () => {
      const value = argv[++i]
      if (value === undefined) throw new Error(`${flag} expects a value`)
      return value
    }
    switch (flag) {
      case '--images':
        args.images = next()
        break
      case '--out':
        args.out = next()
        break
      case '--model':
        args.model = next()
        break
      case '--size':
        args.size = Number(next())
        break
      case '--layer':
        args.layer = next()
        break
      case '--stride':
        args.stride = Number(next())
        break
      case '--offset':
        args.offset = Number(next())
        break
      case '--rgb':
        args.rgb = true
        break
      default:
        throw new Error(`unknown flag ${flag}`)
    }
  }
  return args
}

export async function main(argv: string[]): Promise<number> {
  let args: CliArgs
  try {
    args = parseArgs(argv)
    if (!args.images || !args.out || !args.model) {
      throw new Error('--images, --out and --model are required')
    }
  } catch (error) {
    console.error(`usage error: ${(error as Error).message}`)
    return 1
  }
  if (!fs.existsSync(args.images)) {
    console.error(`data error: images directory ${args.images} does not exist`)
    return 2
  }
  try {
    const result = await extractDirectory(args.images, {
      modelPath: args.model,
      outDir: args.out,
      inputSize: args.size,
      layerName: args.layer,
      stride: args.stride,
      offset: args.offset,
      bgr: !args.rgb,
    })
    console.error(
      `extracted ${result.written.length} image(s) ` +
        `(${result.channels}x${result.height}x${result.width}), ` +
        `skipped ${result.skipped.length} -> ${result.manifestPath}`,
    )
    return 0
  } catch (error) {
    if (error instanceof MissingModelError) {
      console.error(`data error: ${error.message}`)
      return 2
    }
    console.error(`error: ${(error as Error).message}`)
    return 2
  }
}

const entry = process.argv[1]
if (entry && (entry.endsWith('cli.js') || entry.endsWith('spoc-extract'))) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code
  })
}
