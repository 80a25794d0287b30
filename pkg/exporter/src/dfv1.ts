/**
 * The DFV1 feature interchange format.
 *
 * Byte layout, little-endian, no padding:
 *   magic "DFV1" | u16 version=1 | u8 name length | name bytes (UTF-8)
 *   | u32 layer id | u32 dim | u64 count | u64 ids[count]
 *   | f32 rows[count*dim] row-major
 *
 * Row ids are dataset image ids, strictly increasing, so consumers can
 * join several feature files per image without ambiguity.
 */

import { readFileSync, writeFileSync } from 'fs';

export const DFV1_MAGIC = 'DFV1';
export const DFV1_VERSION = 1;

export interface FeatureFile {
  modelName: string;
  layerId: number;
  dim: number;
  ids: BigUint64Array;
  rows: Float32Array; // length = ids.length * dim
}

export function encodeDfv1(ff: FeatureFile): Buffer {
  const name = Buffer.from(ff.modelName, 'utf-8');
  if (name.length > 255) throw new Error('model name longer than 255 bytes');
  const count = ff.ids.length;
  if (ff.rows.length !== count * ff.dim) {
    throw new Error(
      `rows length ${ff.rows.length} != count ${count} * dim ${ff.dim}`,
    );
  }
  for (let i = 1; i < count; i++) {
    if (ff.ids[i] <= ff.ids[i - 1]) {
      throw new Error('row ids must be strictly increasing');
    }
  }
  const total = 4 + 2 + 1 + name.length + 4 + 4 + 8 + 8 * count + 4 * count * ff.dim;
  const buf = Buffer.alloc(total);
  let off = 0;
  buf.write(DFV1_MAGIC, off, 'ascii');
  off += 4;
  buf.writeUInt16LE(DFV1_VERSION, off);
  off += 2;
  buf.writeUInt8(name.length, off);
  off += 1;
  name.copy(buf, off);
  off += name.length;
  buf.writeUInt32LE(ff.layerId, off);
  off += 4;
  buf.writeUInt32LE(ff.dim, off);
  off += 4;
  buf.writeBigUInt64LE(BigInt(count), off);
  off += 8;
  for (let i = 0; i < count; i++) {
    buf.writeBigUInt64LE(ff.ids[i], off);
    off += 8;
  }
  for (let i = 0; i < ff.rows.length; i++) {
    buf.writeFloatLE(ff.rows[i], off);
    off += 4;
  }
  return buf;
}

export function writeDfv1(ff: FeatureFile, path: string): void {
  writeFileSync(path, encodeDfv1(ff));
}

export function decodeDfv1(buf: Buffer): FeatureFile {
  if (buf.length < 7) throw new Error('shorter than any header');
  let off = 0;
  if (buf.toString('ascii', 0, 4) !== DFV1_MAGIC) {
    throw new Error(`bad magic ${buf.toString('ascii', 0, 4)}`);
  }
  off = 4;
  const version = buf.readUInt16LE(off);
  off += 2;
  if (version !== DFV1_VERSION) throw new Error(`unsupported version ${version}`);
  const nameLen = buf.readUInt8(off);
  off += 1;
  if (buf.length < off + nameLen + 16) throw new Error('header truncated');
  const modelName = buf.toString('utf-8', off, off + nameLen);
  off += nameLen;
  const layerId = buf.readUInt32LE(off);
  off += 4;
  const dim = buf.readUInt32LE(off);
  off += 4;
  const count = Number(buf.readBigUInt64LE(off));
  off += 8;
  const expected = off + 8 * count + 4 * count * dim;
  if (buf.length !== expected) {
    throw new Error(`${buf.length} bytes, header arithmetic requires ${expected}`);
  }
  const ids = new BigUint64Array(count);
  for (let i = 0; i < count; i++) {
    ids[i] = buf.readBigUInt64LE(off);
    off += 8;
    if (i > 0 && ids[i] <= ids[i - 1]) {
      throw new Error('row ids are not strictly increasing');
    }
  }
  const rows = new Float32Array(count * dim);
  for (let i = 0; i < rows.length; i++) {
    rows[i] = buf.readFloatLE(off);
    off += 4;
  }
  return { modelName, layerId, dim, ids, rows };
}

export function readDfv1(path: string): FeatureFile {
  return decodeDfv1(readFileSync(path));
}
