/** Checkpoint IO for tfjs layers models stored as model.json + weight bins.
 *
 * Plain @tensorflow/tfjs has no filesystem handlers, so loading and
 * saving go through in-memory artifacts and explicit fs calls. The disk
 * layout matches the standard converter output (a model.json carrying
 * the topology and a weights manifest naming sibling binary shards).
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'

export async function loadModelDir(dir: string): Promise<tf.LayersModel> {
  const jsonPath = path.join(dir, 'model.json')
  if (!fs.existsSync(jsonPath)) {
    throw new Error(`checkpoint not found: ${jsonPath}`)
  }
  const doc = JSON.parse(fs.readFileSync(jsonPath, 'utf8'))
  const specs: tf.io.WeightsManifestEntry[] = []
  const buffers: Buffer[] = []
  for (const group of doc.weightsManifest ?? []) {
    for (const shard of group.paths) {
      const shardPath = path.join(dir, shard)
      if (!fs.existsSync(shardPath)) {
        throw new Error(`checkpoint shard missing: ${shardPath}`)
      }
      buffers.push(fs.readFileSync(shardPath))
    }
    specs.push(...group.weights)
  }
  const weightData = new Uint8Array(Buffer.concat(buffers)).buffer
  return tf.loadLayersModel(tf.io.fromMemory({
    modelTopology: doc.modelTopology,
    weightSpecs: specs,
    weightData,
  }))
}

export async function saveModelDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true })
  await model.save(tf.io.withSaveHandler(async artifacts => {
    const weightData = artifacts.weightData as ArrayBuffer
    fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(weightData))
    const doc = {
      format: 'layers-model',
      modelTopology: artifacts.modelTopology,
      weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
    }
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(doc))
    return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } }
  }))
}

export interface ModelShape {
  height: number
  width: number
  outputDim: number
}

export function modelShape(model: tf.LayersModel): ModelShape {
  const input = model.inputs[0].shape
  const output = model.outputs[0].shape
  if (!input || input.length !== 4 || !output || output.length !== 2) {
    throw new Error('expected an image model: input [batch, H, W, 3], output [batch, dim]')
  }
  return { height: input[1] as number, width: input[2] as number, outputDim: output[1] as number }
}
