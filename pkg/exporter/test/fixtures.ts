/** Synthetic checkpoint fixtures with realistic parameter names. */

import { TensorEntry } from '../src/safetensors.js';

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomTensor(rng: () => number, shape: number[], scale = 0.02): TensorEntry {
  const n = shape.reduce((a, b) => a * b, 1);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) data[i] = (rng() * 2 - 1) * scale;
  return { dtype: 'F32', shape, data };
}

export function onesTensor(shape: number[]): TensorEntry {
  const n = shape.reduce((a, b) => a * b, 1);
  return { dtype: 'F32', shape, data: new Float32Array(n).fill(1) };
}

export interface CheckpointOptions {
  layers?: number;
  embedDim?: number;
  mlpDim?: number;
  seqTokens?: number;
  featureDim?: number;
  numClasses?: number;
  fusedQkv?: boolean;
  withFinalNorm?: boolean;
  seed?: number;
}

/** Torch-convention checkpoint: Linear weights stored as (out, in). */
export function buildCheckpoint(opts: CheckpointOptions = {}): Map<string, TensorEntry> {
  const {
    layers = 12,
    embedDim: d = 192,
    mlpDim = 768,
    seqTokens = 98,
    featureDim = 40,
    numClasses = 12,
    fusedQkv = false,
    withFinalNorm = true,
    seed = 1,
  } = opts;
  const rng = mulberry32(seed);
  const t = new Map<string, TensorEntry>();
  t.set('cls_token', randomTensor(rng, [1, 1, d]));
  t.set('pos_embed', randomTensor(rng, [1, seqTokens + 1, d]));
  t.set('patch_embed.weight', randomTensor(rng, [d, featureDim]));
  for (let i = 0; i < layers; i++) {
    t.set(`blocks.${i}.norm1.weight`, onesTensor([d]));
    t.set(`blocks.${i}.norm1.bias`, randomTensor(rng, [d], 0.01));
    if (fusedQkv) {
      t.set(`blocks.${i}.attn.qkv.weight`, randomTensor(rng, [3 * d, d]));
      t.set(`blocks.${i}.attn.qkv.bias`, randomTensor(rng, [3 * d], 0.01));
    } else {
      for (const p of ['q', 'k', 'v']) {
        t.set(`blocks.${i}.attn.${p}.weight`, randomTensor(rng, [d, d]));
        t.set(`blocks.${i}.attn.${p}.bias`, randomTensor(rng, [d], 0.01));
      }
    }
    t.set(`blocks.${i}.attn.proj.weight`, randomTensor(rng, [d, d]));
    t.set(`blocks.${i}.attn.proj.bias`, randomTensor(rng, [d], 0.01));
    t.set(`blocks.${i}.norm2.weight`, onesTensor([d]));
    t.set(`blocks.${i}.norm2.bias`, randomTensor(rng, [d], 0.01));
    t.set(`blocks.${i}.mlp.fc1.weight`, randomTensor(rng, [mlpDim, d]));
    t.set(`blocks.${i}.mlp.fc1.bias`, randomTensor(rng, [mlpDim], 0.01));
    t.set(`blocks.${i}.mlp.fc2.weight`, randomTensor(rng, [d, mlpDim]));
    t.set(`blocks.${i}.mlp.fc2.bias`, randomTensor(rng, [d], 0.01));
  }
  if (withFinalNorm) {
    t.set('norm.weight', onesTensor([d]));
    t.set('norm.bias', randomTensor(rng, [d], 0.01));
  }
  t.set('head.weight', randomTensor(rng, [numClasses, d]));
  t.set('head.bias', randomTensor(rng, [numClasses], 0.01));
  return t;
}
