/**
 * Export raw text tasks to the token-id interchange format the core toolkit
 * loads: a meta line carrying dataset id and vocab size, then one
 * {"ids": [...]} record per example where ids = encode(input) ++ encode(output).
 */

import { readFileSync, writeFileSync } from 'node:fs';
import { basename } from 'node:path';

import { Tokenizer, loadTokenizer } from './tokenizer.js';

export interface RawExample {
  input: string;
  output: string;
}

/** Accepts a JSON array of {input, output} or one such object per line. */
export function readRawTask(path: string): RawExample[] {
  const text = readFileSync(path, 'utf-8').trim();
  if (text.length === 0) {
    throw new Error(`${path}: empty dataset`);
  }
  let records: unknown[];
  if (text.startsWith('[')) {
    records = JSON.parse(text) as unknown[];
  } else {
    records = text.split('\n').filter((l) => l.trim().length > 0).map((l) => JSON.parse(l));
  }
  const examples = records.map((r, i) => {
    const rec = r as Partial<RawExample>;
    if (typeof rec.input !== 'string' || typeof rec.output !== 'string') {
      throw new Error(`${path}: record ${i + 1} must carry string 'input' and 'output'`);
    }
    return { input: rec.input, output: rec.output };
  });
  if (examples.length === 0) {
    throw new Error(`${path}: empty dataset`);
  }
  return examples;
}

export interface ExportResult {
  outPath: string;
  datasetId: string;
  vocabSize: number;
  exampleCount: number;
  tokenCount: number;
}

export function exportTokenDataset(
  rawPath: string,
  tokenizerId: string,
  outPath: string,
  datasetId?: string,
): ExportResult {
  const tokenizer: Tokenizer = loadTokenizer(tokenizerId);
  const examples = readRawTask(rawPath);
  const id = datasetId ?? basename(outPath).replace(/\.jsonl$/, '');
  const lines: string[] = [
    JSON.stringify({ meta: { dataset_id: id, vocab_size: tokenizer.vocabSize } }),
  ];
  let tokenCount = 0;
  for (const example of examples) {
    const ids = [...tokenizer.encode(example.input), ...tokenizer.encode(example.output)];
    for (const v of ids) {
      if (v < 0 || v >= tokenizer.vocabSize) {
        throw new Error(`token id ${v} out of range for vocab ${tokenizer.vocabSize}`);
      }
    }
    tokenCount += ids.length;
    lines.push(JSON.stringify({ ids }));
  }
  writeFileSync(outPath, lines.join('\n') + '\n', 'utf-8');
  return {
    outPath,
    datasetId: id,
    vocabSize: tokenizer.vocabSize,
    exampleCount: examples.length,
    tokenCount,
  };
}
