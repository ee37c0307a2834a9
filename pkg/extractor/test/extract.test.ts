import { mkdirSync, mkdtempSync, rmSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';

import { afterEach, beforeEach, describe, expect, it } from 'vitest';

import { loadRecords } from '../src/dataset.js';
import { hashVector, parseHashModel } from '../src/encoders.js';
import { runExtraction } from '../src/extract.js';
import { readFeatureFile } from '../src/featureFile.js';
import { parseArgs, UsageError } from '../src/cli.js';

let dir: string;

beforeEach(() => {
  dir = mkdtempSync(join(tmpdir(), 'extract-'));
});

afterEach(() => {
  rmSync(dir, { recursive: true, force: true });
});

interface RecordRow {
  id: string;
  figure_text?: string;
  abstract?: string;
  caption?: string;
  feature_ref?: string;
}

function writeDataset(rows: RecordRow[], name = 'data.jsonl'): string {
  const path = join(dir, name);
  writeFileSync(path, rows.map((r) => JSON.stringify(r)).join('\n') + '\n');
  return path;
}

describe('dataset loader', () => {
  it('loads records and validates ids', () => {
    const path = writeDataset([
      { id: 'a', figure_text: 't', abstract: '', caption: 'c', feature_ref: 'a' },
      { id: 'b', feature_ref: 'b' },
    ]);
    const records = loadRecords(path);
    expect(records).toHaveLength(2);
    expect(records[1].abstract).toBe('');
  });

  it('rejects duplicates and unknown keys with line numbers', () => {
    const dupes = writeDataset([{ id: 'x' }, { id: 'x' }]);
    expect(() => loadRecords(dupes)).toThrow(/line 2/);
    const unknown = writeDataset([{ id: 'x', extra: 1 } as unknown as RecordRow]);
    expect(() => loadRecords(unknown)).toThrow(/unknown key/);
  });
});

describe('hash encoder', () => {
  it('is deterministic, unit norm, and input sensitive', () => {
    const a = hashVector(Buffer.from('same'), 64);
    const b = hashVector(Buffer.from('same'), 64);
    const c = hashVector(Buffer.from('different'), 64);
    expect(a).toEqual(b);
    expect(a).not.toEqual(c);
    const norm = Math.sqrt(a.reduce((acc, v) => acc + v * v, 0));
    expect(Math.abs(norm - 1)).toBeLessThan(1e-6);
  });

  it('parses model ids', () => {
    expect(parseHashModel('hash:512')).toBe(512);
    expect(parseHashModel('Xenova/clip-vit-base-patch32')).toBeNull();
    expect(() => parseHashModel('hash:0')).toThrow(/dim/);
  });
});

describe('image extraction', () => {
  function setupImages(rows: RecordRow[], files: Record<string, string>) {
    const dataset = writeDataset(rows);
    const images = join(dir, 'images');
    mkdirSync(images);
    for (const [name, content] of Object.entries(files)) {
      writeFileSync(join(images, name), content);
    }
    return { dataset, images };
  }

  it('writes one vector per unique feature_ref', async () => {
    const { dataset, images } = setupImages(
      [
        { id: 'r1', feature_ref: 'img0' },
        { id: 'r2', feature_ref: 'img1' },
        { id: 'r3', feature_ref: 'img0' },
      ],
      { 'img0.png': 'pixels-a', 'img1.png': 'pixels-b' },
    );
    const out = join(dir, 'img.fcf');
    const result = await runExtraction({
      dataset, images, out, modality: 'image', model: 'hash:16', batch: 2,
    });
    expect(result).toEqual({ count: 2, dim: 16, errors: [] });
    const table = readFeatureFile(out);
    expect([...table.vectors.keys()]).toEqual(['img0', 'img1']);
  });

  it('identical image bytes under different refs give identical vectors', async () => {
    const { dataset, images } = setupImages(
      [
        { id: 'r1', feature_ref: 'copy1' },
        { id: 'r2', feature_ref: 'copy2' },
      ],
      { 'copy1.png': 'same-bytes', 'copy2.png': 'same-bytes' },
    );
    const out = join(dir, 'img.fcf');
    await runExtraction({ dataset, images, out, modality: 'image', model: 'hash:8', batch: 8 });
    const table = readFeatureFile(out);
    expect(table.vectors.get('copy1')).toEqual(table.vectors.get('copy2'));
  });

  it('fails before encoding, listing every missing ref', async () => {
    const { dataset, images } = setupImages(
      [
        { id: 'r1', feature_ref: 'present' },
        { id: 'r2', feature_ref: 'ghost1' },
        { id: 'r3', feature_ref: 'ghost2' },
      ],
      { 'present.png': 'x' },
    );
    await expect(
      runExtraction({
        dataset, images, out: join(dir, 'img.fcf'),
        modality: 'image', model: 'hash:8', batch: 8,
      }),
    ).rejects.toThrow(/ghost1, ghost2/);
  });
});

describe('abstract extraction', () => {
  it('covers every record including empty abstracts, with finite vectors', async () => {
    const rows = Array.from({ length: 5 }, (_, i) => ({
      id: `r${i}`,
      abstract: i === 2 ? '' : `abstract text ${i % 2}`,
      feature_ref: `r${i}`,
    }));
    const dataset = writeDataset(rows);
    const out = join(dir, 'abs.fcf');
    const result = await runExtraction({
      dataset, out, modality: 'abstract', model: 'hash:12', batch: 2,
    });
    expect(result.count).toBe(5);
    expect(result.errors).toEqual([]);
    const table = readFeatureFile(out);
    expect(table.vectors.size).toBe(5);
    for (const vec of table.vectors.values()) {
      expect([...vec].every((v) => Number.isFinite(v))).toBe(true);
    }
  });

  it('identical abstracts give identical vectors', async () => {
    const dataset = writeDataset([
      { id: 'a', abstract: 'shared words', feature_ref: 'a' },
      { id: 'b', abstract: 'shared words', feature_ref: 'b' },
    ]);
    const out = join(dir, 'abs.fcf');
    await runExtraction({ dataset, out, modality: 'abstract', model: 'hash:12', batch: 8 });
    const table = readFeatureFile(out);
    expect(table.vectors.get('a')).toEqual(table.vectors.get('b'));
  });
});

describe('cli parsing', () => {
  it('parses a full command line', () => {
    const job = parseArgs([
      'extract', '--dataset', 'd.jsonl', '--images', 'imgs', '--out', 'o.fcf',
      '--modality', 'image', '--model', 'hash:16', '--batch', '4',
    ]);
    expect(job).toEqual({
      dataset: 'd.jsonl', images: 'imgs', out: 'o.fcf',
      modality: 'image', model: 'hash:16', batch: 4,
    });
  });

  it('applies per-modality default models', () => {
    const img = parseArgs(['extract', '--dataset', 'd', '--out', 'o', '--modality', 'image']);
    const abs = parseArgs(['extract', '--dataset', 'd', '--out', 'o', '--modality', 'abstract']);
    expect(img.model).toMatch(/clip/i);
    expect(abs.model).toMatch(/roberta/i);
  });

  it('rejects unknown commands, flags, and bad values', () => {
    expect(() => parseArgs(['transmogrify'])).toThrow(UsageError);
    expect(() => parseArgs(['extract', '--dataset', 'd', '--out', 'o', '--modality', 'video']))
      .toThrow(/modality/);
    expect(() => parseArgs(['extract', '--dataset', 'd', '--out', 'o', '--modality', 'image',
                            '--bogus', '1'])).toThrow(/bogus/);
    expect(() => parseArgs(['extract', '--dataset', 'd', '--out', 'o', '--modality', 'image',
                            '--batch', 'zero'])).toThrow(/batch/);
  });
});
