import { mkdtempSync, mkdirSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';

import { RECORD_BYTES } from '../src/cifar';

export function tempDir(prefix = 'ensvis-exp-'): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

/** Deterministic pseudo-image batch: labels cycle 0..9, pixels vary per id. */
export function writeBatch(path: string, n: number, salt = 0): void {
  const buf = Buffer.alloc(n * RECORD_BYTES);
  for (let i = 0; i < n; i++) {
    buf[i * RECORD_BYTES] = i % 10;
    for (let j = 0; j < RECORD_BYTES - 1; j++) {
      buf[i * RECORD_BYTES + 1 + j] = (i * 31 + j * 7 + salt * 13) % 256;
    }
  }
  writeFileSync(path, buf);
}

export function makeCorpus(nTrain: number, nTest: number): string {
  const dir = tempDir();
  const data = join(dir, 'data');
  mkdirSync(data);
  writeBatch(join(data, 'data_batch_1.bin'), nTrain, 0);
  writeBatch(join(data, 'test_batch.bin'), nTest, 1);
  return data;
}
