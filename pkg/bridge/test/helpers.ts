import { spawnSync } from 'node:child_process';
import { mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { float32From, serializeSafetensors, TensorEntry } from '../src/safetensors.js';

export function tempDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

/** Run the core toolkit's CLI; the bridge only talks to its public surface. */
export function runPrimary(args: string[]): { status: number; stdout: string; stderr: string } {
  const result = spawnSync('python3', ['-m', 'loramix.cli', ...args], { encoding: 'utf-8' });
  return { status: result.status ?? -1, stdout: result.stdout, stderr: result.stderr };
}

export function loraTensors(seed: number): TensorEntry[] {
  const rank = 2;
  const dIn = 4;
  const dOut = 4;
  const rand = mulberry32(seed);
  const gen = (n: number) => float32From(Array.from({ length: n }, () => rand() * 2 - 1));
  return [
    { name: 'base.layers.0.attn.lora_A.weight', shape: [rank, dIn], data: gen(rank * dIn) },
    { name: 'base.layers.0.attn.lora_B.weight', shape: [dOut, rank], data: gen(dOut * rank) },
  ];
}

export function writeAdapter(path: string, tensors: TensorEntry[]): void {
  writeFileSync(path, serializeSafetensors(tensors));
}

/** Small deterministic PRNG so fixtures are stable without dependencies. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Token sequences with a seed-specific unigram skew, as raw text tasks. */
export function writeRawTask(path: string, seed: number, examples = 6): void {
  const rand = mulberry32(seed);
  const words = ['alpha', 'beta', 'gamma', 'delta', 'epsilon', 'zeta'];
  const rows: string[] = [];
  for (let i = 0; i < examples; i++) {
    const pick = () => words[Math.floor(rand() * rand() * words.length)];
    const input = Array.from({ length: 8 }, pick).join(' ');
    const output = Array.from({ length: 3 }, pick).join(' ');
    rows.push(JSON.stringify({ input, output }));
  }
  writeFileSync(path, rows.join('\n') + '\n');
}
