import * as fs from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { beforeAll, describe, expect, it } from 'vitest'
import { makeFixture } from '../scripts/make_fixture.js'
import {
  EMBEDDING_DIM, SCENE_CLASSES, exportAerialFeatures, exportGroundFeatures,
  exportSceneActivations,
} from '../src/extract.js'
import { main as cliMain } from '../src/cli.js'

let fixture: string

function job(out: string, overrides: Partial<Record<string, string | number>> = {}) {
  fs.mkdirSync(out, { recursive: true })
  return {
    imagesDir: (overrides.imagesDir as string) ?? path.join(fixture, 'images'),
    metadata: (overrides.metadata as string) ?? path.join(fixture, 'ground_metadata.csv'),
    checkpoint: (overrides.checkpoint as string) ?? path.join(fixture, 'backbone'),
    out,
    batchSize: (overrides.batchSize as number) ?? 2,
  }
}

function scratch(name: string): string {
  const dir = path.join(fixture, 'runs', name)
  fs.mkdirSync(dir, { recursive: true })
  return dir
}

function parseCsv(file: string): string[][] {
  return fs.readFileSync(file, 'utf8').trim().split('\n').map(line => line.split(','))
}

beforeAll(async () => {
  fixture = fs.mkdtempSync(path.join(os.tmpdir(), 'livmap-extractor-'))
  await makeFixture(fixture)
}, 120_000)

describe('ground feature export', () => {
  it('writes one 2048-column row per image, sorted by id', async () => {
    const out = scratch('ground')
    await exportGroundFeatures(job(out))
    const rows = parseCsv(path.join(out, 'ground_features.csv'))
    expect(rows).toHaveLength(4)
    expect(rows[0]).toHaveLength(EMBEDDING_DIM + 1)
    expect(rows[0][0]).toBe('image_id')
    expect(rows[0][1]).toBe('f0')
    expect(rows[0][EMBEDDING_DIM]).toBe(`f${EMBEDDING_DIM - 1}`)
    expect(rows.slice(1).map(r => Number(r[0]))).toEqual([2, 7, 11])
    for (const row of rows.slice(1)) {
      for (const value of row.slice(1)) {
        expect(Number.isFinite(Number(value))).toBe(true)
      }
    }
  }, 120_000)

  it('passes coordinates through untouched in images.csv', async () => {
    const out = scratch('ground-images')
    await exportGroundFeatures(job(out))
    const rows = parseCsv(path.join(out, 'images.csv'))
    expect(rows[0]).toEqual(['image_id', 'x', 'y', 'source'])
    expect(rows[1]).toEqual(['2', '101.25', '90', 'gsv'])
    expect(rows[2]).toEqual(['7', '350.5', '120', 'flickr'])
  }, 120_000)

  it('is deterministic across runs and batch sizes', async () => {
    const a = scratch('det-a')
    const b = scratch('det-b')
    await exportGroundFeatures(job(a, { batchSize: 2 }))
    await exportGroundFeatures(job(b, { batchSize: 1 }))
    expect(fs.readFileSync(path.join(a, 'ground_features.csv'), 'utf8'))
      .toBe(fs.readFileSync(path.join(b, 'ground_features.csv'), 'utf8'))
  }, 120_000)

  it('rejects duplicate ids before writing anything', async () => {
    const out = scratch('dupes')
    const metadata = path.join(fixture, 'dupe_metadata.csv')
    fs.writeFileSync(metadata, [
      'image_id,x,y,source,file',
      '5,0.0,0.0,gsv,black.png',
      '5,1.0,1.0,gsv,checker.png',
      '',
    ].join('\n'))
    await expect(exportGroundFeatures(job(out, { metadata })))
      .rejects.toThrow(/duplicate image_id 5/)
    expect(fs.existsSync(path.join(out, 'ground_features.csv'))).toBe(false)
  })

  it('reports unreadable images and missing checkpoints', async () => {
    const metadata = path.join(fixture, 'missing_metadata.csv')
    fs.writeFileSync(metadata, [
      'image_id,x,y,source,file',
      '1,0.0,0.0,gsv,nope.png',
      '',
    ].join('\n'))
    await expect(exportGroundFeatures(job(scratch('missing-img'), { metadata })))
      .rejects.toThrow(/cannot read image/)
    await expect(exportGroundFeatures(
      job(scratch('missing-ckpt'), { checkpoint: path.join(fixture, 'nowhere') })))
      .rejects.toThrow(/checkpoint not found/)
  })
})

describe('aerial feature export', () => {
  it('writes cell-keyed rows sorted by cell', async () => {
    const out = scratch('aerial')
    await exportAerialFeatures(job(out, {
      metadata: path.join(fixture, 'aerial_metadata.csv'),
    }))
    const rows = parseCsv(path.join(out, 'aerial_features.csv'))
    expect(rows[0].slice(0, 3)).toEqual(['cell_x', 'cell_y', 'f0'])
    expect(rows.slice(1).map(r => `${r[0]},${r[1]}`)).toEqual(['0,2', '1,1', '3,1'])
    expect(rows[1]).toHaveLength(EMBEDDING_DIM + 2)
  }, 120_000)
})

describe('scene activation export', () => {
  it('writes 365 post-softmax values per image summing to one', async () => {
    const out = scratch('acts')
    await exportSceneActivations(job(out, { checkpoint: path.join(fixture, 'scene') }))
    const rows = parseCsv(path.join(out, 'activations.csv'))
    expect(rows).toHaveLength(4)
    expect(rows[0]).toHaveLength(SCENE_CLASSES + 1)
    for (const row of rows.slice(1)) {
      const values = row.slice(1).map(Number)
      expect(values.every(v => v >= 0)).toBe(true)
      const total = values.reduce((a, b) => a + b, 0)
      expect(Math.abs(total - 1)).toBeLessThan(1e-3)
    }
  }, 120_000)

  it('gives identical rows for the same all-black image listed twice', async () => {
    const out = scratch('black-twice')
    const metadata = path.join(fixture, 'black_metadata.csv')
    fs.writeFileSync(metadata, [
      'image_id,x,y,source,file',
      '1,0.0,0.0,flickr,black.png',
      '2,9.0,9.0,flickr,black.png',
      '',
    ].join('\n'))
    await exportSceneActivations(job(out, {
      metadata, checkpoint: path.join(fixture, 'scene'),
    }))
    const rows = parseCsv(path.join(out, 'activations.csv'))
    expect(rows[1].slice(1)).toEqual(rows[2].slice(1))
  }, 120_000)

  it('rejects a non-softmax checkpoint', async () => {
    const out = scratch('not-softmax')
    await expect(exportSceneActivations(job(out)))
      .rejects.toThrow(/365/)
  }, 120_000)
})

describe('command line', () => {
  it('runs the features and activations commands', async () => {
    const out = scratch('cli')
    const codeA = await cliMain([
      'features', '--target', 'ground',
      '--images-dir', path.join(fixture, 'images'),
      '--metadata', path.join(fixture, 'ground_metadata.csv'),
      '--backbone', path.join(fixture, 'backbone'),
      '--out', out, '--batch-size', '2', '--device', 'cpu',
    ])
    expect(codeA).toBe(0)
    const codeB = await cliMain([
      'activations',
      '--images-dir', path.join(fixture, 'images'),
      '--metadata', path.join(fixture, 'ground_metadata.csv'),
      '--backbone', path.join(fixture, 'scene'),
      '--out', out,
    ])
    expect(codeB).toBe(0)
    expect(fs.existsSync(path.join(out, 'ground_features.csv'))).toBe(true)
    expect(fs.existsSync(path.join(out, 'activations.csv'))).toBe(true)
  }, 180_000)

  it('rejects non-cpu devices with a nonzero exit', async () => {
    const code = await cliMain([
      'features',
      '--images-dir', path.join(fixture, 'images'),
      '--metadata', path.join(fixture, 'ground_metadata.csv'),
      '--backbone', path.join(fixture, 'backbone'),
      '--out', scratch('gpu'), '--device', 'cuda',
    ])
    expect(code).toBe(1)
  })
})
