/**
 * Image decoding (PNG/JPEG, pure JS) and the resize-to-square preprocessing
 * expected by VGG-style networks: bilinear resize, optional RGB->BGR swap,
 * per-channel mean subtraction.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'

import * as tf from '@tensorflow/tfjs'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

export class UndecodableImageError extends Error {}

export interface DecodedImage {
  width: number
  height: number
  /** Interleaved RGB, length width*height*3. */
  rgb: Uint8Array
}

/** Channel means of the classic VGG training set, in BGR order. */
export const VGG_BGR_MEANS: [number, number, number] = [103.939, 116.779, 123.68]

export const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

function rgbaToRgb(rgba: Uint8Array | Buffer, pixels: number): Uint8Array {
  const rgb = new Uint8Array(pixels * 3)
  for (let i = 0; i < pixels; i++) {
    rgb[i * 3] = rgba[i * 4]
    rgb[i * 3 + 1] = rgba[i * 4 + 1]
    rgb[i * 3 + 2] = rgba[i * 4 + 2]
  }
  return rgb
}

export function decodeImageFile(filePath: string): DecodedImage {
  const raw = fs.readFileSync(filePath)
  const extension = path.extname(filePath).toLowerCase()
  try {
    if (extension === '.png') {
      const png = PNG.sync.read(raw)
      return {
        width: png.width,
        height: png.height,
        rgb: rgbaToRgb(png.data, png.width * png.height),
      }
    }
    if (extension === '.jpg' || extension === '.jpeg') {
      const decoded = jpeg.decode(raw, { useTArray: true })
      return {
        width: decoded.width,
        height: decoded.height,
        rgb: rgbaToRgb(decoded.data, decoded.width * decoded.height),
      }
    }
  } catch (cause) {
    throw new UndecodableImageError(`${filePath}: ${(cause as Error).message}`)
  }
  throw new UndecodableImageError(`${filePath}: unsupported extension ${extension}`)
}

export interface PreprocessOptions {
  /** Square side length the image is distorted to. */
  size: number
  /** Swap RGB to BGR before mean subtraction (VGG convention). */
  bgr: boolean
  /** Per-channel means subtracted after the optional swap. */
  channelMeans: [number, number, number]
}

/**
 * Decoded image -> [1, size, size, 3] float32 batch ready for the network.
 */
export function preprocessImage(
  image: DecodedImage,
  options: PreprocessOptions,
): tf.Tensor4D {
  return tf.tidy(() => {
    let pixels = tf.tensor3d(image.rgb, [image.height, image.width, 3], 'int32')
      .toFloat()
    let resized = tf.image.resizeBilinear(pixels as tf.Tensor3D, [
      options.size,
      options.size,
    ])
    if (options.bgr) {
      resized = tf.reverse(resized, -1)
    }
    const centered = tf.sub(resized, tf.tensor1d(options.channelMeans))
    return tf.expandDims<tf.Tensor4D>(centered, 0)
  })
}

export function listImageFiles(directory: string): string[] {
  return fs
    .readdirSync(directory)
    .filter((name) => IMAGE_EXTENSIONS.has(path.extname(name).toLowerCase()))
    .sort()
    .map((name) => path.join(directory, name))
}
