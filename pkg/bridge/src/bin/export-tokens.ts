#!/usr/bin/env node
/**
 * lmf-export-tokens --input raw.jsonl --tokenizer byte|tokenizer.json
 *                   --output task.jsonl [--dataset-id name]
 */

import { exportTokenDataset } from '../exportTokens.js';
import { parseFlags, fail } from '../cliFlags.js';

const flags = parseFlags(process.argv.slice(2), ['input', 'tokenizer', 'output', 'dataset-id']);
const input = flags.get('input');
const tokenizer = flags.get('tokenizer') ?? 'byte';
const output = flags.get('output');
if (!input || !output) {
  fail('usage: lmf-export-tokens --input RAW --output OUT.jsonl [--tokenizer byte|tokenizer.json] [--dataset-id ID]');
}

try {
  const result = exportTokenDataset(input!, tokenizer, output!, flags.get('dataset-id'));
  console.log(JSON.stringify(result, null, 2));
} catch (err) {
  fail(String(err));
}
