/** JSONL dataset records matching the training core's schema. */

import { readFileSync } from 'fs';

export interface FigureRecord {
  id: string;
  figure_text: string;
  abstract: string;
  caption: string;
  feature_ref: string;
}

const KNOWN_KEYS = new Set(['id', 'figure_text', 'abstract', 'caption', 'feature_ref']);

export function loadRecords(path: string): FigureRecord[] {
  const lines = readFileSync(path, 'utf-8').split('\n');
  const records: FigureRecord[] = [];
  const seen = new Set<string>();
  lines.forEach((line, idx) => {
    if (!line.trim()) return;
    let raw: unknown;
    try {
      raw = JSON.parse(line);
    } catch (e) {
      throw new Error(`${path}: malformed JSON on line ${idx + 1}`);
    }
    if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
      throw new Error(`${path}: line ${idx + 1} is not a JSON object`);
    }
    const obj = raw as Record<string, unknown>;
    const id = obj.id;
    if (typeof id !== 'string' || !id) {
      throw new Error(`${path}: line ${idx + 1} has no usable 'id'`);
    }
    if (seen.has(id)) {
      throw new Error(`${path}: duplicate id ${JSON.stringify(id)} on line ${idx + 1}`);
    }
    seen.add(id);
    for (const key of Object.keys(obj)) {
      if (!KNOWN_KEYS.has(key)) {
        throw new Error(`${path}: line ${idx + 1} has unknown key ${JSON.stringify(key)}`);
      }
    }
    records.push({
      id,
      figure_text: (obj.figure_text as string) ?? '',
      abstract: (obj.abstract as string) ?? '',
      caption: (obj.caption as string) ?? '',
      feature_ref: (obj.feature_ref as string) ?? '',
    });
  });
  return records;
}
