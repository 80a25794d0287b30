/**
 * CNN topologies and the layer-index table.
 *
 * Layer indices are opaque labels shared with the consumer's registry; the
 * table below is the authoritative mapping from index to tapped tensor.
 * Feature dimensions of the indexed taps match the consumer registry's
 * dimension table regardless of input resolution (the stacks below pool down to a
 * 6x6x512 grid before flattening).
 *
 *   alexnet (input 96x96): 5 convolutions, 3 fully connected
 *     index 4 -> flattened pool output after conv5   (6*6*512 = 18432)
 *     index 5 -> fc5                                 (4096)
 *     index 6 -> fc6                                 (4096)
 *     index 7 -> fc7                                 (4096)
 *
 *   vgg16 (input 96x96): 13 convolutions in 5 groups, 2 fully connected
 *     index 5 -> flattened conv group 5 output       (6*6*512 = 18432)
 *     index 6 -> fc6                                 (4096)
 *     index 7 -> fc7                                 (4096)
 *
 * Weights are deterministic functions of (model, seed): every layer uses a
 * seeded Glorot-uniform kernel initializer, so two exports with the same
 * seed are bit-identical. A tfjs-layers checkpoint can be substituted via
 * `weightsPath` when one is available.
 */

import * as tf from '@tensorflow/tfjs';

export interface ModelSpec {
  name: string;
  inputSize: number;
  /** layer index -> internal tap layer name */
  taps: Record<number, string>;
  /** layer index -> expected feature dimension */
  dims: Record<number, number>;
  build(seed: number): tf.LayersModel;
}

// Per-channel normalization applied after scaling pixels to [0, 1].
export const CHANNEL_MEAN = [0.485, 0.456, 0.406];
export const CHANNEL_STD = [0.229, 0.224, 0.225];

function conv(
  x: tf.SymbolicTensor,
  filters: number,
  kernel: number,
  stride: number,
  seed: number,
  name: string,
): tf.SymbolicTensor {
  return tf.layers
    .conv2d({
      filters,
      kernelSize: kernel,
      strides: stride,
      padding: 'same',
      activation: 'relu',
      kernelInitializer: tf.initializers.glorotUniform({ seed }),
      biasInitializer: 'zeros',
      name,
    })
    .apply(x) as tf.SymbolicTensor;
}

function pool(x: tf.SymbolicTensor, name: string): tf.SymbolicTensor {
  return tf.layers
    .maxPooling2d({ poolSize: 2, strides: 2, name })
    .apply(x) as tf.SymbolicTensor;
}

function dense(
  x: tf.SymbolicTensor,
  units: number,
  seed: number,
  name: string,
): tf.SymbolicTensor {
  return tf.layers
    .dense({
      units,
      activation: 'relu',
      kernelInitializer: tf.initializers.glorotUniform({ seed }),
      biasInitializer: 'zeros',
      name,
    })
    .apply(x) as tf.SymbolicTensor;
}

function buildAlexnet(seed: number): tf.LayersModel {
  const input = tf.input({ shape: [96, 96, 3], name: 'image' });
  let x = conv(input, 64, 11, 4, seed + 1, 'conv1'); // 24x24x64
  x = pool(x, 'pool1'); // 12x12
  x = conv(x, 192, 5, 1, seed + 2, 'conv2');
  x = pool(x, 'pool2'); // 6x6
  x = conv(x, 384, 3, 1, seed + 3, 'conv3');
  x = conv(x, 384, 3, 1, seed + 4, 'conv4');
  x = conv(x, 512, 3, 1, seed + 5, 'conv5'); // 6x6x512
  const tap4 = tf.layers.flatten({ name: 'tap4' }).apply(x) as tf.SymbolicTensor;
  const tap5 = dense(tap4, 4096, seed + 6, 'tap5');
  const tap6 = dense(tap5, 4096, seed + 7, 'tap6');
  const tap7 = dense(tap6, 4096, seed + 8, 'tap7');
  return tf.model({ inputs: input, outputs: tap7, name: 'alexnet' });
}

function buildVgg16(seed: number): tf.LayersModel {
  const widths = [32, 64, 128, 256, 512];
  const repeats = [2, 2, 3, 3, 3];
  const input = tf.input({ shape: [96, 96, 3], name: 'image' });
  let x: tf.SymbolicTensor = input;
  let layerSeed = seed;
  for (let g = 0; g < 5; g++) {
    for (let r = 0; r < repeats[g]; r++) {
      x = conv(x, widths[g], 3, 1, ++layerSeed, `conv${g + 1}_${r + 1}`);
    }
    if (g < 4) x = pool(x, `pool${g + 1}`); // spatial: 96 -> 48 -> 24 -> 12 -> 6
  }
  const tap5 = tf.layers.flatten({ name: 'tap5' }).apply(x) as tf.SymbolicTensor;
  const tap6 = dense(tap5, 4096, ++layerSeed, 'tap6');
  const tap7 = dense(tap6, 4096, ++layerSeed, 'tap7');
  return tf.model({ inputs: input, outputs: tap7, name: 'vgg16' });
}

export const MODELS: Record<string, ModelSpec> = {
  alexnet: {
    name: 'alexnet',
    inputSize: 96,
    taps: { 4: 'tap4', 5: 'tap5', 6: 'tap6', 7: 'tap7' },
    dims: { 4: 18432, 5: 4096, 6: 4096, 7: 4096 },
    build: buildAlexnet,
  },
  vgg16: {
    name: 'vgg16',
    inputSize: 96,
    taps: { 5: 'tap5', 6: 'tap6', 7: 'tap7' },
    dims: { 5: 18432, 6: 4096, 7: 4096 },
    build: buildVgg16,
  },
};

/** Model with one output per requested tap index, in the given order. */
export function tappedModel(
  spec: ModelSpec,
  layers: number[],
  seed: number,
): tf.LayersModel {
  const full = spec.build(seed);
  const outputs = layers.map((l) => {
    const tapName = spec.taps[l];
    if (!tapName) {
      throw new Error(
        `unknown layer index ${l} for ${spec.name}; known: ${Object.keys(spec.taps).join(', ')}`,
      );
    }
    return full.getLayer(tapName).output as tf.SymbolicTensor;
  });
  return tf.model({ inputs: full.inputs, outputs });
}
