/**
 * Load-time verification of a predicted adapter: the file must parse as a
 * safetensors container, follow the LoRA tensor-naming convention with
 * rank-consistent A/B shapes, and (optionally) match a reference adapter's
 * layout exactly.  Verification is read-only; the file hash is checked
 * before and after.
 */

import { readFileSync } from 'node:fs';

import { parseSafetensors, TensorEntry } from './safetensors.js';
import { sha256Of } from './fetchBank.js';

export interface TensorReport {
  name: string;
  shape: number[];
  sha256: string;
}

export interface VerifyReport {
  path: string;
  tensorCount: number;
  totalParams: number;
  loraPairCount: number;
  tensors: TensorReport[];
  matchesReference: boolean | null;
  bitEqualToReference: boolean | null;
  fileUnchanged: boolean;
}

const LORA_A = '.lora_A.weight';
const LORA_B = '.lora_B.weight';

function checkLoraConvention(tensors: TensorEntry[]): number {
  const aShapes = new Map<string, number[]>();
  const bShapes = new Map<string, number[]>();
  for (const tensor of tensors) {
    if (tensor.name.endsWith(LORA_A)) {
      aShapes.set(tensor.name.slice(0, -LORA_A.length), tensor.shape);
    } else if (tensor.name.endsWith(LORA_B)) {
      bShapes.set(tensor.name.slice(0, -LORA_B.length), tensor.shape);
    }
  }
  for (const [layer, aShape] of aShapes) {
    const bShape = bShapes.get(layer);
    if (!bShape) {
      throw new Error(`adapter convention: layer '${layer}' has lora_A but no lora_B`);
    }
    if (aShape.length !== 2 || bShape.length !== 2 || aShape[0] !== bShape[1]) {
      throw new Error(
        `adapter convention: layer '${layer}' rank mismatch (A ${JSON.stringify(aShape)} vs B ${JSON.stringify(bShape)})`,
      );
    }
  }
  for (const layer of bShapes.keys()) {
    if (!aShapes.has(layer)) {
      throw new Error(`adapter convention: layer '${layer}' has lora_B but no lora_A`);
    }
  }
  return aShapes.size;
}

export function verifyAdapter(path: string, referencePath?: string): VerifyReport {
  const before = sha256Of(readFileSync(path));
  const parsed = parseSafetensors(readFileSync(path));
  const loraPairCount = checkLoraConvention(parsed.tensors);

  let matchesReference: boolean | null = null;
  let bitEqualToReference: boolean | null = null;
  if (referencePath) {
    const reference = parseSafetensors(readFileSync(referencePath));
    const layoutOf = (ts: TensorEntry[]) =>
      JSON.stringify(ts.map((t) => [t.name, t.shape]));
    matchesReference = layoutOf(parsed.tensors) === layoutOf(reference.tensors);
    if (!matchesReference) {
      const mine = new Map(parsed.tensors.map((t) => [t.name, t.shape]));
      const theirs = new Map(reference.tensors.map((t) => [t.name, t.shape]));
      for (const name of new Set([...mine.keys(), ...theirs.keys()])) {
        if (JSON.stringify(mine.get(name)) !== JSON.stringify(theirs.get(name))) {
          throw new Error(`adapter layout differs from reference at tensor '${name}'`);
        }
      }
    }
    bitEqualToReference =
      matchesReference &&
      parsed.tensors.every((t, i) => t.data.equals(reference.tensors[i].data));
  }

  const after = sha256Of(readFileSync(path));
  return {
    path,
    tensorCount: parsed.tensors.length,
    totalParams: parsed.tensors.reduce((n, t) => n + t.data.length / 4, 0),
    loraPairCount,
    tensors: parsed.tensors.map((t) => ({
      name: t.name,
      shape: t.shape,
      sha256: sha256Of(t.data),
    })),
    matchesReference,
    bitEqualToReference,
    fileUnchanged: before === after,
  };
}
