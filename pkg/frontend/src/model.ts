/**
 * Loading (and, for tests, saving) tfjs Layers models from a local
 * directory without the tfjs-node file:// handler: model.json next to a
 * single weights.bin shard.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'

import * as tf from '@tensorflow/tfjs'

export class MissingModelError extends Error {}

const MODEL_JSON = 'model.json'
const WEIGHTS_BIN = 'weights.bin'

function toArrayBuffer(buffer: Buffer): ArrayBuffer {
  const copy = new ArrayBuffer(buffer.byteLength)
  new Uint8Array(copy).set(buffer)
  return copy
}

function loadHandler(directory: string): tf.io.IOHandler {
  return {
    load: async () => {
      const modelPath = path.join(directory, MODEL_JSON)
      const weightsPath = path.join(directory, WEIGHTS_BIN)
      const config = JSON.parse(fs.readFileSync(modelPath, 'utf-8'))
      const weightData = toArrayBuffer(fs.readFileSync(weightsPath))
      return {
        modelTopology: config.modelTopology,
        weightSpecs: config.weightsManifest[0].weights,
        weightData,
      }
    },
  }
}

function saveHandler(directory: string): tf.io.IOHandler {
  return tf.io.withSaveHandler(async (artifacts) => {
    fs.mkdirSync(directory, { recursive: true })
    const weightData = tf.io.CompositeArrayBuffer.join(artifacts.weightData)
    fs.writeFileSync(path.join(directory, WEIGHTS_BIN), Buffer.from(weightData))
    const config = {
      modelTopology: artifacts.modelTopology,
      weightsManifest: [
        { paths: [WEIGHTS_BIN], weights: artifacts.weightSpecs },
      ],
    }
    fs.writeFileSync(
      path.join(directory, MODEL_JSON),
      JSON.stringify(config) + '\n',
    )
    return {
      modelArtifactsInfo: {
        dateSaved: new Date(),
        modelTopologyType: 'JSON',
      },
    }
  })
}

export async function loadModel(directory: string): Promise<tf.LayersModel> {
  if (!fs.existsSync(path.join(directory, MODEL_JSON))) {
    throw new MissingModelError(`no ${MODEL_JSON} under ${directory}`)
  }
  return tf.loadLayersModel(loadHandler(directory))
}

export async function saveModel(
  model: tf.LayersModel,
  directory: string,
): Promise<void> {
  await model.save(saveHandler(directory))
}

/** Last layer whose name suggests a convolution (the default tap point). */
export function defaultConvLayerName(model: tf.LayersModel): string {
  const layers = model.layers
  for (let i = layers.length - 1; i >= 0; i--) {
    const className = layers[i].getClassName().toLowerCase()
    if (className.includes('conv')) {
      return layers[i].name
    }
  }
  throw new MissingModelError('model has no convolutional layer')
}

/**
 * Sub-model emitting the named layer's output ("last convolutional layer";
 * pick a pre- or post-activation layer by name to choose the ReLU side).
 */
export function layerOutputModel(
  model: tf.LayersModel,
  layerName: string,
): tf.LayersModel {
  let layer: tf.layers.Layer
  try {
    layer = model.getLayer(layerName)
  } catch {
    throw new MissingModelError(`layer ${layerName} not found in model`)
  }
  return tf.model({
    inputs: model.inputs,
    outputs: layer.output as tf.SymbolicTensor,
  })
}
