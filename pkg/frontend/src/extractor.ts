/**
 * Batch extraction: every decodable image in a directory is resized,
 * pushed through the network, and its tapped activations written as one
 * SPOCFEAT file, plus a manifest covering the directory.
 */

import * as path from 'node:path'
import * as fs from 'node:fs'

import * as tf from '@tensorflow/tfjs'

import {
  FeatureMap,
  ManifestEntry,
  writeFeatureFile,
  writeManifest,
} from './featureFile.js'
import {
  UndecodableImageError,
  VGG_BGR_MEANS,
  decodeImageFile,
  listImageFiles,
  preprocessImage,
} from './image.js'
import { defaultConvLayerName, layerOutputModel, loadModel } from './model.js'

export interface ExtractorConfig {
  /** Directory holding model.json + weights.bin of the pretrained CNN. */
  modelPath: string
  outDir: string
  /** Square input side; the network sees distorted-to-square images. */
  inputSize?: number
  /** Layer to tap; defaults to the last convolutional layer. */
  layerName?: string
  /** Input pixels per feature cell of the tapped layer. */
  stride?: number
  /** Input-pixel center of feature cell (1, 1). */
  offset?: number
  bgr?: boolean
  channelMeans?: [number, number, number]
  log?: (message: string) => void
}

export interface ExtractionResult {
  written: ManifestEntry[]
  skipped: string[]
  manifestPath: string
  channels: number
  height: number
  width: number
}

export const DEFAULT_INPUT_SIZE = 586
export const DEFAULT_STRIDE = 16
export const DEFAULT_OFFSET = 8

async function activationsToFeatureMap(
  activations: tf.Tensor4D,
  imageId: string,
  config: Required<Pick<ExtractorConfig, 'inputSize' | 'stride' | 'offset'>>,
): Promise<FeatureMap> {
  const [, height, width, channels] = activations.shape
  // NHWC -> CHW so the payload is channel-outermost raster order.
  const chw = tf.tidy(() =>
    tf.transpose(tf.squeeze<tf.Tensor3D>(activations, [0]), [2, 0, 1]),
  )
  const data = new Float32Array(await chw.data())
  chw.dispose()
  return {
    imageId,
    channels,
    height,
    width,
    data,
    geometry: {
      stride: config.stride,
      offset: config.offset,
      inputHeight: config.inputSize,
      inputWidth: config.inputSize,
    },
  }
}

export async function extractDirectory(
  imagesDir: string,
  config: ExtractorConfig,
): Promise<ExtractionResult> {
  const inputSize = config.inputSize ?? DEFAULT_INPUT_SIZE
  const stride = config.stride ?? DEFAULT_STRIDE
  const offset = config.offset ?? DEFAULT_OFFSET
  const bgr = config.bgr ?? true
  const channelMeans = config.channelMeans ?? VGG_BGR_MEANS
  const log = config.log ?? ((message: string) => console.error(message))

  const model = await loadModel(config.modelPath)
  const layerName = config.layerName ?? defaultConvLayerName(model)
  const tap = layerOutputModel(model, layerName)

  fs.mkdirSync(config.outDir, { recursive: true })
  const written: ManifestEntry[] = []
  const skipped: string[] = []
  let shape = { channels: 0, height: 0, width: 0 }

  for (const imagePath of listImageFiles(imagesDir)) {
    const imageId = path.basename(imagePath, path.extname(imagePath))
    let decoded
    try {
      decoded = decodeImageFile(imagePath)
    } catch (error) {
      if (error instanceof UndecodableImageError) {
        log(`skipping undecodable image: ${error.message}`)
        skipped.push(imagePath)
        continue
      }
      throw error
    }
    const batch = preprocessImage(decoded, { size: inputSize, bgr, channelMeans })
    const activations = tap.predict(batch) as tf.Tensor4D
    batch.dispose()
    const featureMap = await activationsToFeatureMap(activations, imageId, {
      inputSize,
      stride,
      offset,
    })
    activations.dispose()
    shape = {
      channels: featureMap.channels,
      height: featureMap.height,
      width: featureMap.width,
    }
    const fileName = `${imageId}.feat`
    writeFeatureFile(featureMap, path.join(config.outDir, fileName))
    written.push({ imageId, path: fileName })
  }

  const manifestPath = path.join(config.outDir, 'manifest.json')
  writeManifest(written, manifestPath)
  return { written, skipped, manifestPath, ...shape }
}
