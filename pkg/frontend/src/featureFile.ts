/**
 * SPOCFEAT binary feature files and the JSON manifest.
 *
 * Layout (all integers little-endian u32):
 *   magic "SPOCFEAT" | version=1 | C | H | W | stride | offset |
 *   input_h | input_w | id_len | image id (UTF-8) | C*H*W float32 LE
 *
 * The tensor is channel-outermost, row-major (c, then y, then x), so the
 * files are bit-compatible with the Python reader.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'

export const MAGIC = 'SPOCFEAT'
export const FORMAT_VERSION = 1

const HEADER_BYTES = 8 + 9 * 4

export interface ReceptiveFieldGeometry {
  stride: number
  offset: number
  inputHeight: number
  inputWidth: number
}

export interface FeatureMap {
  imageId: string
  channels: number
  height: number
  width: number
  /** C*H*W values, channel-outermost raster order. */
  data: Float32Array
  geometry: ReceptiveFieldGeometry
}

function checkU32(name: string, value: number): void {
  if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
    throw new RangeError(`${name}=${value} is not representable as u32`)
  }
}

export function validateFeatureMap(map: FeatureMap): void {
  const { channels, height, width, data, geometry } = map
  checkU32('channels', channels)
  checkU32('height', height)
  checkU32('width', width)
  checkU32('stride', geometry.stride)
  checkU32('offset', geometry.offset)
  checkU32('inputHeight', geometry.inputHeight)
  checkU32('inputWidth', geometry.inputWidth)
  if (channels < 1 || height < 1 || width < 1) {
    throw new RangeError(`empty feature map ${channels}x${height}x${width}`)
  }
  if (data.length !== channels * height * width) {
    throw new RangeError(
      `payload holds ${data.length} floats, expected ${channels * height * width}`,
    )
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new RangeError(`non-finite value at index ${i}`)
    }
  }
  const lastX = geometry.offset + geometry.stride * (width - 1)
  const lastY = geometry.offset + geometry.stride * (height - 1)
  if (lastX > geometry.inputWidth - 1 + geometry.stride) {
    throw new RangeError(`cell grid extends past input width ${geometry.inputWidth}`)
  }
  if (lastY > geometry.inputHeight - 1 + geometry.stride) {
    throw new RangeError(`cell grid extends past input height ${geometry.inputHeight}`)
  }
}

export function encodeFeatureFile(map: FeatureMap): Buffer {
  validateFeatureMap(map)
  const idBytes = Buffer.from(map.imageId, 'utf-8')
  const buffer = Buffer.alloc(HEADER_BYTES + idBytes.length + map.data.length * 4)
  buffer.write(MAGIC, 0, 'ascii')
  let pos = 8
  for (const value of [
    FORMAT_VERSION,
    map.channels,
    map.height,
    map.width,
    map.geometry.stride,
    map.geometry.offset,
    map.geometry.inputHeight,
    map.geometry.inputWidth,
    idBytes.length,
  ]) {
    buffer.writeUInt32LE(value, pos)
    pos += 4
  }
  idBytes.copy(buffer, pos)
  pos += idBytes.length
  for (let i = 0; i < map.data.length; i++) {
    buffer.writeFloatLE(map.data[i], pos + i * 4)
  }
  return buffer
}

export function writeFeatureFile(map: FeatureMap, filePath: string): void {
  fs.writeFileSync(filePath, encodeFeatureFile(map))
}

export function readFeatureFile(filePath: string): FeatureMap {
  const raw = fs.readFileSync(filePath)
  if (raw.length < HEADER_BYTES || raw.toString('ascii', 0, 8) !== MAGIC) {
    throw new RangeError(`${filePath}: not a ${MAGIC} file`)
  }
  const version = raw.readUInt32LE(8)
  if (version !== FORMAT_VERSION) {
    throw new RangeError(`${filePath}: unsupported version ${version}`)
  }
  const channels = raw.readUInt32LE(12)
  const height = raw.readUInt32LE(16)
  const width = raw.readUInt32LE(20)
  const stride = raw.readUInt32LE(24)
  const offset = raw.readUInt32LE(28)
  const inputHeight = raw.readUInt32LE(32)
  const inputWidth = raw.readUInt32LE(36)
  const idLen = raw.readUInt32LE(40)
  const imageId = raw.toString('utf-8', HEADER_BYTES, HEADER_BYTES + idLen)
  const payload = raw.subarray(HEADER_BYTES + idLen)
  const expected = channels * height * width * 4
  if (payload.length !== expected) {
    throw new RangeError(
      `${filePath}: payload is ${payload.length} bytes, expected ${expected}`,
    )
  }
  const data = new Float32Array(channels * height * width)
  for (let i = 0; i < data.length; i++) {
    data[i] = payload.readFloatLE(i * 4)
  }
  const map: FeatureMap = {
    imageId,
    channels,
    height,
    width,
    data,
    geometry: { stride, offset, inputHeight, inputWidth },
  }
  validateFeatureMap(map)
  return map
}

export interface ManifestEntry {
  imageId: string
  path: string
}

export function writeManifest(entries: ManifestEntry[], filePath: string): void {
  const records = entries.map((e) => ({ image_id: e.imageId, path: e.path }))
  fs.writeFileSync(filePath, JSON.stringify(records, null, 2) + '\n')
}

export function readManifest(filePath: string): ManifestEntry[] {
  const records = JSON.parse(fs.readFileSync(filePath, 'utf-8')) as Array<{
    image_id: string
    path: string
  }>
  const base = path.dirname(filePath)
  return records.map((r) => ({
    imageId: r.image_id,
    path: path.isAbsolute(r.path) ? r.path : path.join(base, r.path),
  }))
}
