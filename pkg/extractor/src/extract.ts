/** Batch inference turning images into embedding rows or scene activations. */

import * as tf from '@tensorflow/tfjs'
import {
  AerialRecord, GroundRecord, parseAerialMetadata, parseGroundMetadata,
  writeActivations, writeAerialFeatures, writeGroundFeatures, writeImages,
} from './csv.js'
import { loadImageTensor } from './image.js'
import { loadModelDir, modelShape } from './model.js'

export const EMBEDDING_DIM = 2048
export const SCENE_CLASSES = 365

export interface ExtractionJob {
  imagesDir: string
  metadata: string
  checkpoint: string
  out: string
  batchSize: number
}

/** Run a model over files in deterministic id order; returns one row each. */
async function inferRows(
  files: string[], job: ExtractionJob, expectedDim: number, label: string,
): Promise<Float32Array[]> {
  const model = await loadModelDir(job.checkpoint)
  const shape = modelShape(model)
  if (shape.outputDim !== expectedDim) {
    throw new Error(
      `${label} checkpoint produces ${shape.outputDim}-dim rows, expected ${expectedDim}`)
  }
  const rows: Float32Array[] = []
  for (let start = 0; start < files.length; start += job.batchSize) {
    const slice = files.slice(start, start + job.batchSize)
    const tensors = slice.map(f => loadImageTensor(job.imagesDir, f, shape.height, shape.width))
    const batch = tf.concat(tensors, 0)
    tensors.forEach(t => t.dispose())
    const out = model.predict(batch, { batchSize: slice.length }) as tf.Tensor
    const values = await out.data() as Float32Array
    batch.dispose()
    out.dispose()
    for (let i = 0; i < slice.length; i++) {
      rows.push(values.slice(i * expectedDim, (i + 1) * expectedDim))
    }
  }
  model.dispose()
  return rows
}

/** Ground mode: ground_features.csv plus a pass-through images.csv. */
export async function exportGroundFeatures(job: ExtractionJob): Promise<GroundRecord[]> {
  const records = parseGroundMetadata(job.metadata).sort((a, b) => a.imageId - b.imageId)
  const rows = await inferRows(records.map(r => r.file), job, EMBEDDING_DIM, 'backbone')
  writeGroundFeatures(records.map((r, i) => [r.imageId, rows[i]]), EMBEDDING_DIM,
    `${job.out}/ground_features.csv`)
  writeImages(records, `${job.out}/images.csv`)
  return records
}

export async function exportAerialFeatures(job: ExtractionJob): Promise<AerialRecord[]> {
  const records = parseAerialMetadata(job.metadata)
    .sort((a, b) => a.cellX - b.cellX || a.cellY - b.cellY)
  const rows = await inferRows(records.map(r => r.file), job, EMBEDDING_DIM, 'backbone')
  writeAerialFeatures(records.map((r, i) => [r.cellX, r.cellY, rows[i]]), EMBEDDING_DIM,
    `${job.out}/aerial_features.csv`)
  return records
}

/** Scene activations: 365 post-softmax values per image, rows sum to one. */
export async function exportSceneActivations(job: ExtractionJob): Promise<GroundRecord[]> {
  const records = parseGroundMetadata(job.metadata).sort((a, b) => a.imageId - b.imageId)
  const rows = await inferRows(records.map(r => r.file), job, SCENE_CLASSES, 'scene')
  for (const [i, row] of rows.entries()) {
    let total = 0
    for (const v of row) total += v
    if (Math.abs(total - 1) > 1e-3) {
      throw new Error(
        `scene model output for image ${records[i].imageId} sums to ${total}; ` +
        'expected softmax activations')
    }
  }
  writeActivations(records.map((r, i) => [r.imageId, rows[i]]), SCENE_CLASSES,
    `${job.out}/activations.csv`)
  return records
}
