/**
 * Batched activation export: read the corpus, run the tapped network, and
 * write one DFV1 file per requested layer and split.
 */

import { mkdirSync } from 'fs';
import { join } from 'path';

import * as tf from '@tensorflow/tfjs';

import { CifarImage, IMAGE_SIDE, Split, readSplit, subsetPerClass, toFloatRgb } from './cifar';
import { FeatureFile, writeDfv1 } from './dfv1';
import { CHANNEL_MEAN, CHANNEL_STD, MODELS, ModelSpec, tappedModel } from './models';

export interface ExportSpec {
  model: string;
  layers: number[];
  dataDir: string;
  outDir: string;
  splits: Split[];
  batchSize: number;
  /** First N images per class per split; 0 exports the whole split. */
  subset: number;
  /** Weight seed; same seed means bit-identical exports. */
  seed: number;
  /** Optional tfjs-layers checkpoint (file:// model.json) overriding seeded weights. */
  weightsPath?: string;
  /** Input side length; defaults to the model's native resolution. */
  resize?: number;
}

export const DEFAULT_SPEC = {
  batchSize: 64,
  subset: 0,
  seed: 17,
  splits: ['train', 'test'] as Split[],
};

let backendReady: Promise<void> | null = null;

/** Prefer the wasm backend; fall back to plain cpu when unavailable. */
export function ensureBackend(): Promise<void> {
  if (!backendReady) {
    backendReady = (async () => {
      try {
        const wasm = require('@tensorflow/tfjs-backend-wasm');
        const sep = require('path').sep;
        wasm.setWasmPaths(
          join(__dirname, '..', 'node_modules', '@tensorflow', 'tfjs-backend-wasm', 'dist') + sep,
        );
        await tf.setBackend('wasm');
        await tf.ready();
      } catch {
        await tf.setBackend('cpu');
        await tf.ready();
      }
    })();
  }
  return backendReady;
}

function resolveModel(spec: ExportSpec): ModelSpec {
  const model = MODELS[spec.model];
  if (!model) {
    throw new Error(`unknown model '${spec.model}'; known: ${Object.keys(MODELS).join(', ')}`);
  }
  return model;
}

/** Validate layer indices and expected dims; throws before any file I/O. */
export function validateSpec(spec: ExportSpec): void {
  const model = resolveModel(spec);
  if (spec.layers.length === 0) throw new Error('no layers requested');
  for (const layer of spec.layers) {
    if (!(layer in model.taps)) {
      throw new Error(
        `unknown layer index ${layer} for ${model.name}; known: ${Object.keys(model.taps).join(', ')}`,
      );
    }
  }
}

function preprocessBatch(images: CifarImage[], inputSize: number): tf.Tensor4D {
  return tf.tidy(() => {
    const flat = new Float32Array(images.length * IMAGE_SIDE * IMAGE_SIDE * 3);
    images.forEach((img, i) => flat.set(toFloatRgb(img), i * IMAGE_SIDE * IMAGE_SIDE * 3));
    let x = tf.tensor4d(flat, [images.length, IMAGE_SIDE, IMAGE_SIDE, 3]);
    if (inputSize !== IMAGE_SIDE) {
      x = tf.image.resizeBilinear(x, [inputSize, inputSize]);
    }
    return x.sub(tf.tensor1d(CHANNEL_MEAN)).div(tf.tensor1d(CHANNEL_STD)) as tf.Tensor4D;
  });
}

export async function exportActivations(spec: ExportSpec): Promise<string[]> {
  validateSpec(spec);
  await ensureBackend();
  const model = resolveModel(spec);
  const inputSize = spec.resize ?? model.inputSize;
  let net: tf.LayersModel;
  if (spec.weightsPath) {
    const loaded = await tf.loadLayersModel(spec.weightsPath);
    const outputs = spec.layers.map(
      (l) => loaded.getLayer(model.taps[l]).output as tf.SymbolicTensor,
    );
    net = tf.model({ inputs: loaded.inputs, outputs });
  } else {
    net = tappedModel(model, spec.layers, spec.seed);
  }
  try {
    return await runExport(spec, model, net, inputSize);
  } finally {
    // The fc weights alone are hundreds of MB on the wasm heap; free them
    // so several exports can run in one process.
    net.weights.forEach((w) => {
      const v = w.read();
      if (!v.isDisposed) v.dispose();
    });
  }
}

async function runExport(
  spec: ExportSpec,
  model: ModelSpec,
  net: tf.LayersModel,
  inputSize: number,
): Promise<string[]> {
  const written: string[] = [];
  for (const split of spec.splits) {
    const images = subsetPerClass(readSplit(spec.dataDir, split), spec.subset);
    const n = images.length;
    const buffers = spec.layers.map((l) => new Float32Array(n * model.dims[l]));
    for (let start = 0; start < n; start += spec.batchSize) {
      const batch = images.slice(start, start + spec.batchSize);
      const x = preprocessBatch(batch, inputSize);
      const outputs = net.predict(x) as tf.Tensor | tf.Tensor[];
      const taps = Array.isArray(outputs) ? outputs : [outputs];
      for (let t = 0; t < taps.length; t++) {
        const dim = model.dims[spec.layers[t]];
        const got = taps[t].size / batch.length;
        if (got !== dim) {
          throw new Error(
            `${model.name} layer ${spec.layers[t]}: tap dim ${got}, registry expects ${dim}`,
          );
        }
        buffers[t].set(await taps[t].data() as Float32Array, start * dim);
      }
      x.dispose();
      taps.forEach((tensor) => tensor.dispose());
    }
    const ids = new BigUint64Array(n);
    images.forEach((img, i) => (ids[i] = BigInt(img.id)));
    const splitDir = join(spec.outDir, split);
    mkdirSync(splitDir, { recursive: true });
    for (let t = 0; t < spec.layers.length; t++) {
      const layer = spec.layers[t];
      const ff: FeatureFile = {
        modelName: model.name,
        layerId: layer,
        dim: model.dims[layer],
        ids,
        rows: buffers[t],
      };
      const path = join(splitDir, `${model.name}_${layer}.dfv1`);
      writeDfv1(ff, path);
      written.push(path);
    }
  }
  return written;
}
