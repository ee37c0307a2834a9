/**
 * CLI: extract --dataset PATH --images DIR --out PATH
 *              --modality {image|abstract} [--model ID] [--batch N]
 *
 * JSON result on stdout; messages on stderr. Exit codes: 0 success,
 * 1 runtime failure (including collected per-record errors), 2 usage.
 */

import { resolve } from 'path';
import { fileURLToPath } from 'url';

import { DEFAULT_IMAGE_MODEL, DEFAULT_TEXT_MODEL } from './encoders.js';
import { runExtraction, ExtractionJob } from './extract.js';

const USAGE =
  'usage: figcap-extract extract --dataset PATH --images DIR --out PATH ' +
  '--modality {image|abstract} [--model ID] [--batch N]';

export function parseArgs(argv: string[]): ExtractionJob {
  if (argv[0] !== 'extract') {
    throw new UsageError(`unknown command ${JSON.stringify(argv[0] ?? '')}\n${USAGE}`);
  }
  const flags = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith('--') || value === undefined) {
      throw new UsageError(`bad argument ${JSON.stringify(flag)}\n${USAGE}`);
    }
    flags.set(flag.slice(2), value);
  }
  const known = new Set(['dataset', 'images', 'out', 'modality', 'model', 'batch']);
  for (const key of flags.keys()) {
    if (!known.has(key)) {
      throw new UsageError(`unknown flag --${key}\n${USAGE}`);
    }
  }
  const dataset = flags.get('dataset');
  const out = flags.get('out');
  const modality = flags.get('modality');
  if (!dataset || !out || !modality) {
    throw new UsageError(`--dataset, --out and --modality are required\n${USAGE}`);
  }
  if (modality !== 'image' && modality !== 'abstract') {
    throw new UsageError(`--modality must be image or abstract, got ${modality}`);
  }
  const batch = Number(flags.get('batch') ?? '8');
  if (!Number.isInteger(batch) || batch < 1) {
    throw new UsageError(`--batch must be a positive integer`);
  }
  return {
    dataset,
    images: flags.get('images'),
    out,
    modality,
    model: flags.get('model') ?? (modality === 'image' ? DEFAULT_IMAGE_MODEL : DEFAULT_TEXT_MODEL),
    batch,
  };
}

export class UsageError extends Error {}

export async function main(argv: string[]): Promise<number> {
  let job: ExtractionJob;
  try {
    job = parseArgs(argv);
  } catch (e) {
    console.error((e as Error).message);
    return 2;
  }
  try {
    const result = await runExtraction(job);
    console.log(
      JSON.stringify({
        out: job.out,
        modality: job.modality,
        model: job.model,
        count: result.count,
        dim: result.dim,
        errors: result.errors,
      }),
    );
    if (result.errors.length > 0) {
      for (const err of result.errors) {
        console.error(err);
      }
      return 1;
    }
    return 0;
  } catch (e) {
    console.error((e as Error).message);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  fileURLToPath(import.meta.url) === resolve(process.argv[1]);
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
