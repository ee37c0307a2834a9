/**
 * FCF1 feature container: the byte contract shared with the training core.
 *
 * Layout (integers little-endian):
 *   magic   4 bytes "FCF1"
 *   version u32 (1)
 *   count   u32
 *   dim     u32
 *   index   count x (u16 key byte length, UTF-8 key bytes)
 *   payload count x dim float32, in index order
 */

import { mkdtempSync, readFileSync, renameSync, rmSync, writeFileSync } from 'fs';
import { dirname, join } from 'path';

export const MAGIC = 'FCF1';
export const VERSION = 1;

export class FeatureFormatError extends Error {}

export interface FeaturePair {
  key: string;
  vector: Float32Array;
}

export function encodeFeatureFile(pairs: FeaturePair[], dim: number): Buffer {
  const seen = new Set<string>();
  const indexParts: Buffer[] = [];
  const payload = Buffer.alloc(pairs.length * dim * 4);
  pairs.forEach((pair, i) => {
    if (seen.has(pair.key)) {
      throw new Error(`duplicate key ${JSON.stringify(pair.key)}`);
    }
    seen.add(pair.key);
    if (pair.vector.length !== dim) {
      throw new Error(
        `vector for key ${JSON.stringify(pair.key)} has length ${pair.vector.length}, expected ${dim}`,
      );
    }
    const keyBytes = Buffer.from(pair.key, 'utf-8');
    if (keyBytes.length > 0xffff) {
      throw new Error(`key ${JSON.stringify(pair.key)} longer than 65535 bytes`);
    }
    const len = Buffer.alloc(2);
    len.writeUInt16LE(keyBytes.length, 0);
    indexParts.push(len, keyBytes);
    for (let j = 0; j < dim; j++) {
      payload.writeFloatLE(pair.vector[j], (i * dim + j) * 4);
    }
  });
  const header = Buffer.alloc(16);
  header.write(MAGIC, 0, 'ascii');
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(pairs.length, 8);
  header.writeUInt32LE(dim, 12);
  return Buffer.concat([header, ...indexParts, payload]);
}

/** Write atomically: temp file in the target directory, then rename. */
export function writeFeatureFile(pairs: FeaturePair[], dim: number, path: string): void {
  const blob = encodeFeatureFile(pairs, dim);
  const tmpDir = mkdtempSync(join(dirname(path) || '.', '.features-'));
  const tmp = join(tmpDir, 'out.fcf');
  try {
    writeFileSync(tmp, blob);
    renameSync(tmp, path);
  } finally {
    rmSync(tmpDir, { recursive: true, force: true });
  }
}

export interface FeatureTable {
  dim: number;
  vectors: Map<string, Float32Array>;
}

export function readFeatureFile(path: string): FeatureTable {
  const raw = readFileSync(path);
  if (raw.length < 16 || raw.toString('ascii', 0, 4) !== MAGIC) {
    throw new FeatureFormatError(`${path}: bad magic, expected ${MAGIC}`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== VERSION) {
    throw new FeatureFormatError(`${path}: unsupported version ${version}`);
  }
  const count = raw.readUInt32LE(8);
  const dim = raw.readUInt32LE(12);
  let offset = 16;
  const keys: string[] = [];
  for (let i = 0; i < count; i++) {
    if (offset + 2 > raw.length) {
      throw new FeatureFormatError(`${path}: truncated index at byte ${offset}`);
    }
    const klen = raw.readUInt16LE(offset);
    offset += 2;
    if (offset + klen > raw.length) {
      throw new FeatureFormatError(`${path}: truncated key at byte ${offset}`);
    }
    keys.push(raw.toString('utf-8', offset, offset + klen));
    offset += klen;
  }
  const expected = count * dim * 4;
  const actual = raw.length - offset;
  if (actual !== expected) {
    throw new FeatureFormatError(
      `${path}: payload has ${actual} bytes, expected ${expected} (${count} x ${dim} float32)`,
    );
  }
  const vectors = new Map<string, Float32Array>();
  keys.forEach((key, i) => {
    const vec = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      vec[j] = raw.readFloatLE(offset + (i * dim + j) * 4);
    }
    vectors.set(key, vec);
  });
  return { dim, vectors };
}
