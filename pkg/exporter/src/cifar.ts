/**
 * CIFAR-10 binary corpus reading: 3073-byte records (one label byte, then
 * 3072 channel-planar pixel bytes), five train batches plus one test batch.
 */

import { existsSync, readFileSync, statSync } from 'fs';
import { join } from 'path';

export const IMAGE_SIDE = 32;
export const PIXEL_BYTES = IMAGE_SIDE * IMAGE_SIDE * 3;
export const RECORD_BYTES = 1 + PIXEL_BYTES;
export const NUM_CLASSES = 10;

const TRAIN_BATCHES = [1, 2, 3, 4, 5].map((i) => `data_batch_${i}.bin`);
const TEST_BATCHES = ['test_batch.bin'];

export type Split = 'train' | 'test';

export interface CifarImage {
  /** Channel-planar bytes exactly as stored (R plane, G plane, B plane). */
  pixels: Uint8Array;
  label: number;
  /** Stable index within the split, in file order. */
  id: number;
}

function resolveDir(dataDir: string): string {
  const nested = join(dataDir, 'cifar-10-batches-bin');
  return existsSync(nested) && statSync(nested).isDirectory() ? nested : dataDir;
}

export function readSplit(dataDir: string, split: Split): CifarImage[] {
  const dir = resolveDir(dataDir);
  const names = (split === 'train' ? TRAIN_BATCHES : TEST_BATCHES).filter((n) =>
    existsSync(join(dir, n)),
  );
  if (names.length === 0) {
    throw new Error(`no ${split} batch files under ${dir}`);
  }
  const images: CifarImage[] = [];
  for (const name of names) {
    const blob = readFileSync(join(dir, name));
    if (blob.length === 0 || blob.length % RECORD_BYTES !== 0) {
      throw new Error(
        `${name}: ${blob.length} bytes is not a positive multiple of ${RECORD_BYTES}`,
      );
    }
    for (let off = 0; off < blob.length; off += RECORD_BYTES) {
      const label = blob[off];
      if (label >= NUM_CLASSES) {
        throw new Error(`${name}: record ${off / RECORD_BYTES} has label byte ${label}`);
      }
      images.push({
        pixels: new Uint8Array(blob.buffer, blob.byteOffset + off + 1, PIXEL_BYTES),
        label,
        id: images.length,
      });
    }
  }
  return images;
}

/**
 * First `perClass` images of every class, ids preserved. Mirrors the
 * pipeline's --subset rule so exported rows join cached features exactly.
 */
export function subsetPerClass(images: CifarImage[], perClass: number): CifarImage[] {
  if (perClass <= 0) return images;
  const taken = new Map<number, number>();
  const out: CifarImage[] = [];
  for (const img of images) {
    const n = taken.get(img.label) ?? 0;
    if (n < perClass) {
      taken.set(img.label, n + 1);
      out.push(img);
    }
  }
  return out;
}

/** Interleaved HWC float RGB in [0, 1]. */
export function toFloatRgb(img: CifarImage): Float32Array {
  const n = IMAGE_SIDE * IMAGE_SIDE;
  const out = new Float32Array(n * 3);
  for (let p = 0; p < n; p++) {
    out[3 * p] = img.pixels[p] / 255;
    out[3 * p + 1] = img.pixels[n + p] / 255;
    out[3 * p + 2] = img.pixels[2 * n + p] / 255;
  }
  return out;
}
