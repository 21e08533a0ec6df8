#!/usr/bin/env node
/** lmf-fetch-bank --manifest manifest.json --dest bankdir */

import { fetchBank, readManifest } from '../fetchBank.js';
import { parseFlags, fail } from '../cliFlags.js';

const flags = parseFlags(process.argv.slice(2), ['manifest', 'dest']);
const manifestPath = flags.get('manifest');
const dest = flags.get('dest');
if (!manifestPath || !dest) {
  fail('usage: lmf-fetch-bank --manifest manifest.json --dest DIR');
}

fetchBank(readManifest(manifestPath!), dest!)
  .then((report) => console.log(JSON.stringify(report, null, 2)))
  .catch((err) => fail(String(err)));
