/** PNG decoding into normalized RGB tensors. */

import * as fs from 'node:fs'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'

export interface DecodedImage {
  width: number
  height: number
  /** RGB in [0, 1], shape [height, width, 3] row-major. */
  data: Float32Array
}

export function decodePng(filePath: string): DecodedImage {
  let raw: Buffer
  try {
    raw = fs.readFileSync(filePath)
  } catch (err) {
    throw new Error(`cannot read image ${filePath}: ${(err as Error).message}`)
  }
  let png: PNG
  try {
    png = PNG.sync.read(raw)
  } catch (err) {
    throw new Error(`cannot decode image ${filePath}: ${(err as Error).message}`)
  }
  const pixels = png.width * png.height
  const data = new Float32Array(pixels * 3)
  for (let i = 0; i < pixels; i++) {
    data[i * 3] = png.data[i * 4] / 255
    data[i * 3 + 1] = png.data[i * 4 + 1] / 255
    data[i * 3 + 2] = png.data[i * 4 + 2] / 255
  }
  return { width: png.width, height: png.height, data }
}

/** Load a directory image as a [1, H, W, 3] tensor resized for the model. */
export function loadImageTensor(
  imagesDir: string, file: string, targetHeight: number, targetWidth: number,
): tf.Tensor4D {
  const decoded = decodePng(path.join(imagesDir, file))
  return tf.tidy(() => {
    const img = tf.tensor3d(decoded.data, [decoded.height, decoded.width, 3])
    const resized = (decoded.height === targetHeight && decoded.width === targetWidth)
      ? img
      : tf.image.resizeBilinear(img, [targetHeight, targetWidth])
    return resized.expandDims(0) as tf.Tensor4D
  })
}
