#!/usr/bin/env node
/** lmf-verify-adapter --adapter predicted.safetensors [--reference bank.safetensors] */

import { verifyAdapter } from '../verifyAdapter.js';
import { parseFlags, fail } from '../cliFlags.js';

const flags = parseFlags(process.argv.slice(2), ['adapter', 'reference']);
const adapter = flags.get('adapter');
if (!adapter) {
  fail('usage: lmf-verify-adapter --adapter FILE [--reference FILE]');
}

try {
  const report = verifyAdapter(adapter!, flags.get('reference'));
  console.log(JSON.stringify(report, null, 2));
  if (!report.fileUnchanged) {
    fail('adapter file changed during verification');
  }
} catch (err) {
  fail(String(err));
}
