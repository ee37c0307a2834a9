/** Extraction jobs: run an encoder over a dataset, write an FCF1 file. */

import { existsSync, readFileSync } from 'fs';
import { join } from 'path';

import { loadRecords } from './dataset.js';
import { makeImageEncoder, makeTextEncoder } from './encoders.js';
import { writeFeatureFile, FeaturePair } from './featureFile.js';

export interface ExtractionJob {
  dataset: string;
  images?: string;
  out: string;
  modality: 'image' | 'abstract';
  model: string;
  batch: number;
}

export interface ExtractionResult {
  count: number;
  dim: number;
  errors: string[];
}

const IMAGE_EXTENSIONS = ['', '.png', '.jpg', '.jpeg'];

function resolveImagePath(dir: string, ref: string): string | null {
  for (const ext of IMAGE_EXTENSIONS) {
    const candidate = join(dir, ref + ext);
    if (existsSync(candidate)) return candidate;
  }
  return null;
}

async function extractImages(job: ExtractionJob): Promise<ExtractionResult> {
  if (!job.images) {
    throw new Error('image extraction needs --images DIR');
  }
  const records = loadRecords(job.dataset);
  const refs: string[] = [];
  const seen = new Set<string>();
  for (const record of records) {
    if (!record.feature_ref) {
      throw new Error(`record ${JSON.stringify(record.id)} has no feature_ref`);
    }
    if (!seen.has(record.feature_ref)) {
      seen.add(record.feature_ref);
      refs.push(record.feature_ref);
    }
  }

  // Fail before any model call, listing every missing image.
  const paths = new Map<string, string>();
  const missing: string[] = [];
  for (const ref of refs) {
    const path = resolveImagePath(job.images, ref);
    if (path === null) {
      missing.push(ref);
    } else {
      paths.set(ref, path);
    }
  }
  if (missing.length > 0) {
    throw new Error(`missing images for refs: ${missing.join(', ')}`);
  }

  const encoder = makeImageEncoder(job.model);
  const buffers = refs.map((ref) => readFileSync(paths.get(ref)!));
  const vectors = await encoder.encodeImages(buffers, job.batch);
  const dim = vectors[0]?.length ?? 0;
  const pairs: FeaturePair[] = refs.map((ref, i) => ({ key: ref, vector: vectors[i] }));
  writeFeatureFile(pairs, dim, job.out);
  return { count: pairs.length, dim, errors: [] };
}

async function extractAbstracts(job: ExtractionJob): Promise<ExtractionResult> {
  const records = loadRecords(job.dataset);
  const refs: string[] = [];
  const texts = new Map<string, string>();
  const errors: string[] = [];
  for (const record of records) {
    if (!record.feature_ref) {
      throw new Error(`record ${JSON.stringify(record.id)} has no feature_ref`);
    }
    if (!texts.has(record.feature_ref)) {
      texts.set(record.feature_ref, record.abstract);
      refs.push(record.feature_ref);
    } else if (texts.get(record.feature_ref) !== record.abstract) {
      errors.push(
        `${record.feature_ref}: conflicting abstracts for one feature_ref; kept the first`,
      );
    }
  }

  const encoder = makeTextEncoder(job.model);
  const pairs: FeaturePair[] = [];
  let dim = 0;
  for (let start = 0; start < refs.length; start += job.batch) {
    const chunk = refs.slice(start, start + job.batch);
    let vectors: Float32Array[];
    try {
      vectors = await encoder.encodeTexts(chunk.map((r) => texts.get(r)!), job.batch);
    } catch (batchError) {
      // Isolate per-record failures; the job continues.
      vectors = [];
      for (const ref of chunk) {
        try {
          const [vec] = await encoder.encodeTexts([texts.get(ref)!], 1);
          vectors.push(vec);
        } catch (e) {
          errors.push(`${ref}: ${(e as Error).message}`);
          vectors.push(new Float32Array(0));
        }
      }
    }
    chunk.forEach((ref, i) => {
      const vec = vectors[i];
      if (vec.length > 0) {
        dim = dim || vec.length;
        pairs.push({ key: ref, vector: vec });
      }
    });
  }
  writeFeatureFile(pairs, dim, job.out);
  return { count: pairs.length, dim, errors };
}

export async function runExtraction(job: ExtractionJob): Promise<ExtractionResult> {
  if (job.batch < 1) {
    throw new Error(`--batch must be >= 1, got ${job.batch}`);
  }
  return job.modality === 'image' ? extractImages(job) : extractAbstracts(job);
}
