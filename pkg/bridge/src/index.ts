export { parseSafetensors, serializeSafetensors, float32From, toFloat32Array } from './safetensors.js';
export type { TensorEntry, ParsedAdapter } from './safetensors.js';
export { ByteTokenizer, BpeTokenizer, loadTokenizer } from './tokenizer.js';
export type { Tokenizer } from './tokenizer.js';
export { exportTokenDataset, readRawTask } from './exportTokens.js';
export type { ExportResult, RawExample } from './exportTokens.js';
export { fetchBank, readManifest, sha256Of } from './fetchBank.js';
export type { BankManifest, FetchReport } from './fetchBank.js';
export { verifyAdapter } from './verifyAdapter.js';
export type { VerifyReport, TensorReport } from './verifyAdapter.js';
