/** CSV parsing and writing in the exact formats the pipeline consumes. */

import * as fs from 'node:fs'

export interface GroundRecord {
  imageId: number
  x: number
  y: number
  source: string
  file: string
}

export interface AerialRecord {
  cellX: number
  cellY: number
  file: string
}

const GROUND_HEADER = 'image_id,x,y,source,file'
const AERIAL_HEADER = 'cell_x,cell_y,file'

function readRows(path: string, expectedHeader: string): string[][] {
  let text: string
  try {
    text = fs.readFileSync(path, 'utf8')
  } catch (err) {
    throw new Error(`cannot read metadata ${path}: ${(err as Error).message}`)
  }
  const lines = text.split('\n').filter(line => line.trim().length > 0)
  if (lines.length === 0 || lines[0].trim() !== expectedHeader) {
    throw new Error(`${path}: expected header "${expectedHeader}"`)
  }
  return lines.slice(1).map(line => line.split(','))
}

/** Parse ground metadata; duplicate ids abort before any output is written. */
export function parseGroundMetadata(path: string): GroundRecord[] {
  const records: GroundRecord[] = []
  const seen = new Set<number>()
  for (const [lineno, row] of readRows(path, GROUND_HEADER).entries()) {
    if (row.length !== 5) {
      throw new Error(`${path}: row ${lineno + 2}: expected 5 fields, got ${row.length}`)
    }
    const imageId = Number(row[0])
    const x = Number(row[1])
    const y = Number(row[2])
    if (!Number.isInteger(imageId) || !Number.isFinite(x) || !Number.isFinite(y)) {
      throw new Error(`${path}: row ${lineno + 2}: malformed values`)
    }
    if (seen.has(imageId)) {
      throw new Error(`${path}: row ${lineno + 2}: duplicate image_id ${imageId}`)
    }
    seen.add(imageId)
    records.push({ imageId, x, y, source: row[3], file: row[4] })
  }
  return records
}

export function parseAerialMetadata(path: string): AerialRecord[] {
  const records: AerialRecord[] = []
  const seen = new Set<string>()
  for (const [lineno, row] of readRows(path, AERIAL_HEADER).entries()) {
    if (row.length !== 3) {
      throw new Error(`${path}: row ${lineno + 2}: expected 3 fields, got ${row.length}`)
    }
    const cellX = Number(row[0])
    const cellY = Number(row[1])
    if (!Number.isInteger(cellX) || !Number.isInteger(cellY)) {
      throw new Error(`${path}: row ${lineno + 2}: malformed cell indices`)
    }
    const key = `${cellX},${cellY}`
    if (seen.has(key)) {
      throw new Error(`${path}: row ${lineno + 2}: duplicate cell (${key})`)
    }
    seen.add(key)
    records.push({ cellX, cellY, file: row[2] })
  }
  return records
}

/** Shortest decimal text that round-trips; float32 values widen exactly. */
function fmt(value: number): string {
  return String(value)
}

function featureHeader(prefix: string[], dim: number): string {
  const cols = [...prefix]
  for (let i = 0; i < dim; i++) cols.push(`f${i}`)
  return cols.join(',')
}

export function writeGroundFeatures(
  rows: Array<[number, Float32Array]>, dim: number, path: string,
): void {
  const sorted = [...rows].sort((a, b) => a[0] - b[0])
  const lines = [featureHeader(['image_id'], dim)]
  for (const [imageId, vec] of sorted) {
    lines.push(`${imageId},` + Array.from(vec, fmt).join(','))
  }
  fs.writeFileSync(path, lines.join('\n') + '\n')
}

export function writeAerialFeatures(
  rows: Array<[number, number, Float32Array]>, dim: number, path: string,
): void {
  const sorted = [...rows].sort((a, b) => a[0] - b[0] || a[1] - b[1])
  const lines = [featureHeader(['cell_x', 'cell_y'], dim)]
  for (const [cx, cy, vec] of sorted) {
    lines.push(`${cx},${cy},` + Array.from(vec, fmt).join(','))
  }
  fs.writeFileSync(path, lines.join('\n') + '\n')
}

export function writeActivations(
  rows: Array<[number, Float32Array]>, classes: number, path: string,
): void {
  const sorted = [...rows].sort((a, b) => a[0] - b[0])
  const header = ['image_id']
  for (let i = 0; i < classes; i++) header.push(`a${i}`)
  const lines = [header.join(',')]
  for (const [imageId, vec] of sorted) {
    lines.push(`${imageId},` + Array.from(vec, fmt).join(','))
  }
  fs.writeFileSync(path, lines.join('\n') + '\n')
}

/** Pass-through image records; coordinates are written untouched. */
export function writeImages(records: GroundRecord[], path: string): void {
  const sorted = [...records].sort((a, b) => a.imageId - b.imageId)
  const lines = ['image_id,x,y,source']
  for (const rec of sorted) {
    lines.push(`${rec.imageId},${fmt(rec.x)},${fmt(rec.y)},${rec.source}`)
  }
  fs.writeFileSync(path, lines.join('\n') + '\n')
}
