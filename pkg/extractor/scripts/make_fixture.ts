/** Builds the seeded test fixture: two tiny models and three PNG images.
 *
 * The backbone stands in for a 2048-dim embedding network (conv stack
 * with global average pooling); the scene model ends in a 365-way
 * softmax. Both use seeded initializers, so the fixture is identical
 * on every machine.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'
import { saveModelDir } from '../src/model.js'
import { EMBEDDING_DIM, SCENE_CLASSES } from '../src/extract.js'

const SIZE = 16

function buildBackbone(): tf.LayersModel {
  const model = tf.sequential()
  model.add(tf.layers.conv2d({
    inputShape: [SIZE, SIZE, 3], filters: EMBEDDING_DIM, kernelSize: 3,
    activation: 'relu', kernelInitializer: tf.initializers.glorotUniform({ seed: 11 }),
    biasInitializer: 'zeros',
  }))
  model.add(tf.layers.globalAveragePooling2d({}))
  return model
}

function buildSceneModel(): tf.LayersModel {
  const model = tf.sequential()
  model.add(tf.layers.conv2d({
    inputShape: [SIZE, SIZE, 3], filters: 16, kernelSize: 3,
    activation: 'relu', kernelInitializer: tf.initializers.glorotUniform({ seed: 23 }),
    biasInitializer: 'zeros',
  }))
  model.add(tf.layers.globalAveragePooling2d({}))
  model.add(tf.layers.dense({
    units: SCENE_CLASSES, activation: 'softmax',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 37 }),
    biasInitializer: 'zeros',
  }))
  return model
}

function writePng(filePath: string, paint: (x: number, y: number) => [number, number, number]) {
  const png = new PNG({ width: SIZE, height: SIZE })
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const [r, g, b] = paint(x, y)
      const k = (y * SIZE + x) * 4
      png.data[k] = r
      png.data[k + 1] = g
      png.data[k + 2] = b
      png.data[k + 3] = 255
    }
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

export async function makeFixture(root: string): Promise<void> {
  const imagesDir = path.join(root, 'images')
  fs.mkdirSync(imagesDir, { recursive: true })

  await saveModelDir(buildBackbone(), path.join(root, 'backbone'))
  await saveModelDir(buildSceneModel(), path.join(root, 'scene'))

  writePng(path.join(imagesDir, 'gradient.png'),
    (x, y) => [x * 16, y * 16, (x + y) * 8])
  writePng(path.join(imagesDir, 'checker.png'),
    (x, y) => ((x >> 2) + (y >> 2)) % 2 === 0 ? [220, 40, 40] : [40, 40, 220])
  writePng(path.join(imagesDir, 'black.png'), () => [0, 0, 0])

  fs.writeFileSync(path.join(root, 'ground_metadata.csv'), [
    'image_id,x,y,source,file',
    '7,350.5,120.0,flickr,checker.png',
    '2,101.25,90.0,gsv,gradient.png',
    '11,222.0,305.75,flickr,black.png',
    '',
  ].join('\n'))
  fs.writeFileSync(path.join(root, 'aerial_metadata.csv'), [
    'cell_x,cell_y,file',
    '3,1,checker.png',
    '0,2,gradient.png',
    '1,1,black.png',
    '',
  ].join('\n'))
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url.endsWith(process.argv[1].split('/').pop() as string)
if (invokedDirectly) {
  const target = process.argv[2] ?? 'fixture'
  makeFixture(target).then(() => console.log(`fixture written to ${target}`))
}
