/**
 * Minimal safetensors container support (F32 only), mirroring the canonical
 * form the Python toolkit writes: lexicographic tensor order, compact
 * sorted-key JSON header, little-endian payload.
 */

export interface TensorEntry {
  name: string;
  shape: number[];
  /** Raw little-endian float32 bytes, length = 4 * product(shape). */
  data: Buffer;
}

export interface ParsedAdapter {
  tensors: TensorEntry[];
  metadata: Record<string, string>;
}

function productOf(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function parseSafetensors(buffer: Buffer): ParsedAdapter {
  if (buffer.length < 8) {
    throw new Error('safetensors: file too short for header length');
  }
  const headerLen = Number(buffer.readBigUInt64LE(0));
  if (buffer.length < 8 + headerLen) {
    throw new Error('safetensors: truncated header');
  }
  const headerRaw = buffer.subarray(8, 8 + headerLen).toString('utf-8');
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(headerRaw) as Record<string, unknown>;
  } catch (err) {
    throw new Error(`safetensors: invalid header JSON (${String(err)})`);
  }
  // JSON.parse silently keeps the last duplicate key; detect duplicates on
  // the raw text so bad files cannot hide a tensor
  const keyPattern = /"((?:[^"\\]|\\.)*)"\s*:\s*\{/g;
  const seen = new Set<string>();
  for (let m = keyPattern.exec(headerRaw); m !== null; m = keyPattern.exec(headerRaw)) {
    if (seen.has(m[1])) {
      throw new Error(`safetensors: duplicate tensor name '${m[1]}'`);
    }
    seen.add(m[1]);
  }

  const payload = buffer.subarray(8 + headerLen);
  const tensors: TensorEntry[] = [];
  let metadata: Record<string, string> = {};
  for (const [name, entryRaw] of Object.entries(header)) {
    if (name === '__metadata__') {
      metadata = entryRaw as Record<string, string>;
      continue;
    }
    const entry = entryRaw as { dtype?: string; shape?: number[]; data_offsets?: [number, number] };
    if (entry.dtype !== 'F32') {
      throw new Error(`safetensors: tensor '${name}' has unsupported dtype ${entry.dtype} (only F32 accepted)`);
    }
    if (!Array.isArray(entry.shape) || !Array.isArray(entry.data_offsets)) {
      throw new Error(`safetensors: tensor '${name}' entry malformed`);
    }
    const [start, end] = entry.data_offsets;
    if (end - start !== 4 * productOf(entry.shape)) {
      throw new Error(`safetensors: tensor '${name}' offsets disagree with shape`);
    }
    if (start < 0 || end > payload.length) {
      throw new Error(`safetensors: tensor '${name}' payload truncated`);
    }
    tensors.push({ name, shape: entry.shape, data: payload.subarray(start, end) });
  }
  tensors.sort((a, b) => (a.name < b.name ? -1 : a.name > b.name ? 1 : 0));
  return { tensors, metadata };
}

export function serializeSafetensors(tensors: TensorEntry[]): Buffer {
  const ordered = [...tensors].sort((a, b) => (a.name < b.name ? -1 : a.name > b.name ? 1 : 0));
  const header: Record<string, unknown> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const t of ordered) {
    const size = 4 * productOf(t.shape);
    if (t.data.length !== size) {
      throw new Error(`safetensors: tensor '${t.name}' data length ${t.data.length} != ${size}`);
    }
    header[t.name] = { data_offsets: [offset, offset + size], dtype: 'F32', shape: t.shape };
    chunks.push(t.data);
    offset += size;
  }
  // sorted keys + compact separators match the Python writer byte for byte
  const sortedKeys = Object.keys(header).sort();
  const headerJson =
    '{' +
    sortedKeys
      .map((k) => `${JSON.stringify(k)}:${canonicalJson(header[k])}`)
      .join(',') +
    '}';
  const headerRaw = Buffer.from(headerJson, 'utf-8');
  const lengthPrefix = Buffer.alloc(8);
  lengthPrefix.writeBigUInt64LE(BigInt(headerRaw.length));
  return Buffer.concat([lengthPrefix, headerRaw, ...chunks]);
}

function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return '[' + value.map(canonicalJson).join(',') + ']';
  }
  if (value !== null && typeof value === 'object') {
    const keys = Object.keys(value as Record<string, unknown>).sort();
    return (
      '{' +
      keys.map((k) => `${JSON.stringify(k)}:${canonicalJson((value as Record<string, unknown>)[k])}`).join(',') +
      '}'
    );
  }
  return JSON.stringify(value);
}

export function float32From(values: number[]): Buffer {
  const arr = new Float32Array(values);
  return Buffer.from(arr.buffer.slice(0));
}

export function toFloat32Array(entry: TensorEntry): Float32Array {
  const copy = Buffer.from(entry.data); // alignment-safe copy
  return new Float32Array(copy.buffer, copy.byteOffset, copy.length / 4);
}
