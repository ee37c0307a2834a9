/**
 * Embedding encoders: hub-backed models via transformers.js, plus a
 * deterministic sha256-seeded encoder ("hash:<dim>" model id) for
 * air-gapped runs and tests.
 */

import { createHash } from 'crypto';

export const DEFAULT_IMAGE_MODEL = 'Xenova/clip-vit-base-patch32';
export const DEFAULT_TEXT_MODEL = 'Xenova/roberta-base';

export interface ImageEncoder {
  /** One embedding per image buffer, in order. */
  encodeImages(images: Buffer[], batchSize: number): Promise<Float32Array[]>;
}

export interface TextEncoder {
  /** One pooled embedding per text (mean over final-layer token states). */
  encodeTexts(texts: string[], batchSize: number): Promise<Float32Array[]>;
}

// --- deterministic hash encoder ------------------------------------------

function* u32Stream(seed: Buffer): Generator<number> {
  let counter = 0;
  for (;;) {
    const block = createHash('sha256').update(seed).update(String(counter++)).digest();
    for (let i = 0; i + 4 <= block.length; i += 4) {
      yield block.readUInt32LE(i);
    }
  }
}

/** Unit-norm gaussian vector derived deterministically from seed bytes. */
export function hashVector(seed: Buffer, dim: number): Float32Array {
  const stream = u32Stream(seed);
  const values = new Float64Array(dim);
  let norm = 0;
  for (let i = 0; i < dim; i++) {
    const u1 = ((stream.next().value as number) + 1) / 4294967297; // (0, 1)
    const u2 = (stream.next().value as number) / 4294967296; // [0, 1)
    const z = Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
    values[i] = z;
    norm += z * z;
  }
  norm = Math.sqrt(norm);
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    out[i] = values[i] / norm;
  }
  return out;
}

export function parseHashModel(model: string): number | null {
  const match = /^hash:(\d+)$/.exec(model);
  if (!match) return null;
  const dim = Number(match[1]);
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new Error(`bad hash encoder dim in model id ${JSON.stringify(model)}`);
  }
  return dim;
}

class HashImageEncoder implements ImageEncoder {
  constructor(private readonly dim: number) {}

  async encodeImages(images: Buffer[]): Promise<Float32Array[]> {
    // Pure function of the pixel bytes: identical files map to identical vectors.
    return images.map((bytes) => hashVector(bytes, this.dim));
  }
}

class HashTextEncoder implements TextEncoder {
  constructor(private readonly dim: number) {}

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map((text) => hashVector(Buffer.from(`text|${text}`, 'utf-8'), this.dim));
  }
}

// --- transformers.js encoders ----------------------------------------------

// Optional dependency: resolved at runtime so air-gapped installs still
// build; a variable specifier keeps the compiler from requiring its types.
const TRANSFORMERS_MODULE = '@xenova/transformers';

// eslint-disable-next-line @typescript-eslint/no-explicit-any
async function loadTransformers(): Promise<any> {
  try {
    return await import(TRANSFORMERS_MODULE);
  } catch (e) {
    throw new Error(
      '@xenova/transformers is not installed; use a "hash:<dim>" model id or install the dependency',
    );
  }
}

class HubImageEncoder implements ImageEncoder {
  constructor(private readonly modelId: string) {}

  async encodeImages(images: Buffer[], batchSize: number): Promise<Float32Array[]> {
    const tf = await loadTransformers();
    const processor = await tf.AutoProcessor.from_pretrained(this.modelId);
    const model = await tf.CLIPVisionModelWithProjection.from_pretrained(this.modelId);
    const out: Float32Array[] = [];
    for (let start = 0; start < images.length; start += batchSize) {
      const chunk = images.slice(start, start + batchSize);
      const raws = await Promise.all(
        chunk.map((bytes) => tf.RawImage.fromBlob(new Blob([new Uint8Array(bytes)]))),
      );
      const inputs = await processor(raws);
      const { image_embeds } = await model(inputs);
      const [n, dim] = image_embeds.dims.slice(-2);
      const data = image_embeds.data as Float32Array;
      for (let i = 0; i < n; i++) {
        out.push(new Float32Array(data.subarray(i * dim, (i + 1) * dim)));
      }
    }
    return out;
  }
}

class HubTextEncoder implements TextEncoder {
  constructor(private readonly modelId: string) {}

  async encodeTexts(texts: string[], batchSize: number): Promise<Float32Array[]> {
    const tf = await loadTransformers();
    const extractor = await tf.pipeline('feature-extraction', this.modelId);
    const out: Float32Array[] = [];
    for (let start = 0; start < texts.length; start += batchSize) {
      const chunk = texts.slice(start, start + batchSize);
      const result = await extractor(chunk, { pooling: 'mean' });
      const [n, dim] = result.dims.slice(-2);
      const data = result.data as Float32Array;
      for (let i = 0; i < n; i++) {
        out.push(new Float32Array(data.subarray(i * dim, (i + 1) * dim)));
      }
    }
    return out;
  }
}

export function makeImageEncoder(model: string): ImageEncoder {
  const hashDim = parseHashModel(model);
  return hashDim !== null ? new HashImageEncoder(hashDim) : new HubImageEncoder(model);
}

export function makeTextEncoder(model: string): TextEncoder {
  const hashDim = parseHashModel(model);
  return hashDim !== null ? new HashTextEncoder(hashDim) : new HubTextEncoder(model);
}
