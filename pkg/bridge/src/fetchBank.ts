/**
 * Download an adapter bank described by a manifest, recording content hashes
 * so reruns skip verified files and corruption is detected.  Partial
 * downloads are removed on failure; a lockfile in the destination directory
 * carries the recorded sha256 per adapter.
 */

import { createHash } from 'node:crypto';
import { existsSync, mkdirSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

export interface BankManifest {
  model_id: string;
  adapters: { id: string; url: string; sha256?: string }[];
}

export interface FetchReport {
  downloaded: string[];
  skipped: string[];
  lockPath: string;
}

const LOCK_NAME = 'manifest.lock.json';

export function readManifest(path: string): BankManifest {
  const manifest = JSON.parse(readFileSync(path, 'utf-8')) as BankManifest;
  if (!manifest.model_id || !Array.isArray(manifest.adapters)) {
    throw new Error(`${path}: manifest needs model_id and adapters[]`);
  }
  for (const adapter of manifest.adapters) {
    if (!adapter.id || !adapter.url) {
      throw new Error(`${path}: every adapter needs id and url`);
    }
  }
  return manifest;
}

export function sha256Of(buffer: Buffer): string {
  return createHash('sha256').update(buffer).digest('hex');
}

function readLock(destDir: string): Record<string, string> {
  const lockPath = join(destDir, LOCK_NAME);
  if (!existsSync(lockPath)) return {};
  return JSON.parse(readFileSync(lockPath, 'utf-8')) as Record<string, string>;
}

export async function fetchBank(manifest: BankManifest, destDir: string): Promise<FetchReport> {
  mkdirSync(destDir, { recursive: true });
  const lock = readLock(destDir);
  const downloaded: string[] = [];
  const skipped: string[] = [];

  for (const adapter of manifest.adapters) {
    const filePath = join(destDir, `${adapter.id}.safetensors`);
    const wanted = adapter.sha256 ?? lock[adapter.id];
    if (existsSync(filePath) && wanted) {
      const existing = sha256Of(readFileSync(filePath));
      if (existing === wanted) {
        skipped.push(adapter.id);
        continue;
      }
    }
    let body: Buffer;
    try {
      const response = await fetch(adapter.url);
      if (!response.ok) {
        throw new Error(`HTTP ${response.status} for ${adapter.url}`);
      }
      body = Buffer.from(await response.arrayBuffer());
    } catch (err) {
      if (existsSync(filePath)) rmSync(filePath); // no partial files left behind
      throw new Error(`download failed for adapter '${adapter.id}': ${String(err)}`);
    }
    const digest = sha256Of(body);
    if (adapter.sha256 && digest !== adapter.sha256) {
      throw new Error(
        `hash mismatch for adapter '${adapter.id}': expected ${adapter.sha256}, got ${digest}`,
      );
    }
    writeFileSync(filePath, body);
    lock[adapter.id] = digest;
    downloaded.push(adapter.id);
  }

  const lockPath = join(destDir, LOCK_NAME);
  writeFileSync(lockPath, JSON.stringify(lock, Object.keys(lock).sort(), 2) + '\n');
  return { downloaded, skipped, lockPath };
}
