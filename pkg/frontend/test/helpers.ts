import * as fs from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'

import * as tf from '@tensorflow/tfjs'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

import { saveModel } from '../src/model.js'

/** Deterministic PRNG so generated images and weights are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix))
}

/**
 * Small stand-in for a "very deep" network: four stride-2 convolutions,
 * i.e. a total downsampling factor of 16, ReLU fused into every layer so
 * the tapped output is post-activation like converted VGG graphs.
 */
export function buildTestModel(inputSize: number, seed = 1234): tf.LayersModel {
  const model = tf.sequential()
  model.add(
    tf.layers.conv2d({
      name: 'conv1',
      filters: 5,
      kernelSize: 3,
      strides: 2,
      padding: 'same',
      activation: 'relu',
      inputShape: [inputSize, inputSize, 3],
    }),
  )
  for (const [name, filters] of [
    ['conv2', 5],
    ['conv3', 8],
    ['conv4', 6],
  ] as const) {
    model.add(
      tf.layers.conv2d({
        name,
        filters,
        kernelSize: 3,
        strides: 2,
        padding: 'same',
        activation: 'relu',
      }),
    )
  }
  const random = mulberry32(seed)
  const weights = model.getWeights().map((w) => {
    const values = new Float32Array(w.size)
    for (let i = 0; i < values.length; i++) {
      values[i] = (random() - 0.5) * 0.2
    }
    return tf.tensor(values, w.shape)
  })
  model.setWeights(weights)
  return model
}

export async function writeTestModel(inputSize: number, seed = 1234): Promise<string> {
  const dir = tempDir('spoc-model-')
  await saveModel(buildTestModel(inputSize, seed), dir)
  return dir
}

export function writePng(filePath: string, size: number, seed: number): void {
  const png = new PNG({ width: size, height: size })
  const random = mulberry32(seed)
  for (let i = 0; i < size * size; i++) {
    png.data[i * 4] = Math.floor(random() * 256)
    png.data[i * 4 + 1] = Math.floor(random() * 256)
    png.data[i * 4 + 2] = Math.floor(random() * 256)
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

export function writeBlackPng(filePath: string, size: number): void {
  const png = new PNG({ width: size, height: size })
  for (let i = 0; i < size * size; i++) {
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

export function writeJpeg(filePath: string, size: number, seed: number): void {
  const random = mulberry32(seed)
  const data = Buffer.alloc(size * size * 4)
  for (let i = 0; i < size * size; i++) {
    data[i * 4] = Math.floor(random() * 256)
    data[i * 4 + 1] = Math.floor(random() * 256)
    data[i * 4 + 2] = Math.floor(random() * 256)
    data[i * 4 + 3] = 255
  }
  const encoded = jpeg.encode({ data, width: size, height: size }, 90)
  fs.writeFileSync(filePath, encoded.data)
}
