/**
 * Ordered name-mapping rules from checkpoint parameter names to container
 * tensor names.
 *
 * The engine stores projections as x @ W with W of shape (in, out); torch
 * Linear weights arrive as (out, in), so most weight rules carry a
 * transpose flag. Fused attention projections (qkv.weight of shape
 * (3d, d)) split into the three per-projection tensors along the output
 * dimension. Checkpoint tensors no rule matches are reported as unmapped,
 * never silently dropped.
 */

import { ModelConfig } from './dkwt.js';
import { TensorEntry } from './safetensors.js';

export class MappingError extends Error {}

export interface MappedTensor {
  source: string;
  target: string;
  transposed: boolean;
  shape: [number, number];
  data: Float32Array;
}

interface Target {
  name: string;
  /** expected SOURCE shape as (rows, cols) before any transform */
  sourceShape: [number, number];
  transpose: boolean;
  /** slice of the source rows to take before transform (for fused qkv) */
  rowSlice?: [number, number];
}

interface Rule {
  pattern: RegExp;
  targets: (m: RegExpMatchArray, c: ModelConfig) => Target[];
}

/** Checkpoint naming convention: ViT-style parameter names (cls_token,
 * pos_embed, patch_embed, blocks.N.attn/{q,k,v,qkv,proj}, blocks.N.norm1/2,
 * blocks.N.mlp.fc1/fc2, head). */
export const RULES: Rule[] = [
  {
    pattern: /^(cls_token|class_token|class_embedding)$/,
    targets: (_m, c) => [{ name: 'embed.class', sourceShape: [1, c.embed_dim], transpose: false }],
  },
  {
    pattern: /^(pos_embed|pos_embedding|positional_embedding)$/,
    targets: (_m, c) => [
      { name: 'embed.pos', sourceShape: [c.seq_tokens + 1, c.embed_dim], transpose: false },
    ],
  },
  {
    pattern: /^(patch_embed|to_patch_embedding|input_proj)\.weight$/,
    targets: (_m, c) => [
      { name: 'embed.w0', sourceShape: [c.embed_dim, c.feature_dim], transpose: true },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.([qkv])\.weight$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.attn.w${m[2]}`, sourceShape: [c.embed_dim, c.embed_dim], transpose: true },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.([qkv])\.bias$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.attn.w${m[2]}.bias`, sourceShape: [1, c.embed_dim], transpose: false },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.qkv\.weight$/,
    targets: (m, c) =>
      ['wq', 'wk', 'wv'].map((short, i) => ({
        name: `layer.${m[1]}.attn.${short}`,
        sourceShape: [3 * c.embed_dim, c.embed_dim] as [number, number],
        transpose: true,
        rowSlice: [i * c.embed_dim, (i + 1) * c.embed_dim] as [number, number],
      })),
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.qkv\.bias$/,
    targets: (m, c) =>
      ['wq', 'wk', 'wv'].map((short, i) => ({
        name: `layer.${m[1]}.attn.${short}.bias`,
        sourceShape: [1, 3 * c.embed_dim] as [number, number],
        transpose: false,
        rowSlice: [i * c.embed_dim, (i + 1) * c.embed_dim] as [number, number],
      })),
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.proj\.weight$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.attn.wp`, sourceShape: [c.embed_dim, c.embed_dim], transpose: true },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.attn\.proj\.bias$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.attn.wp.bias`, sourceShape: [1, c.embed_dim], transpose: false },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.norm([12])\.(weight|bias)$/,
    targets: (m, c) => [
      {
        name: `layer.${m[1]}.ln${m[2]}.${m[3] === 'weight' ? 'gamma' : 'beta'}`,
        sourceShape: [1, c.embed_dim],
        transpose: false,
      },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.mlp\.fc1\.weight$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.mlp.w1`, sourceShape: [c.mlp_dim, c.embed_dim], transpose: true },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.mlp\.fc1\.bias$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.mlp.b1`, sourceShape: [1, c.mlp_dim], transpose: false },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.mlp\.fc2\.weight$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.mlp.w2`, sourceShape: [c.embed_dim, c.mlp_dim], transpose: true },
    ],
  },
  {
    pattern: /^blocks\.(\d+)\.mlp\.fc2\.bias$/,
    targets: (m, c) => [
      { name: `layer.${m[1]}.mlp.b2`, sourceShape: [1, c.embed_dim], transpose: false },
    ],
  },
  {
    pattern: /^head\.weight$/,
    targets: (_m, c) => [
      { name: 'head.w', sourceShape: [c.num_classes, c.embed_dim], transpose: true },
    ],
  },
  {
    pattern: /^head\.bias$/,
    targets: (_m, c) => [{ name: 'head.b', sourceShape: [1, c.num_classes], transpose: false }],
  },
];

/** Lossless to binary32; wider sources round to nearest even (fround). */
function toF32(data: Float32Array | Float64Array): Float32Array {
  if (data instanceof Float32Array) return data;
  const out = new Float32Array(data.length);
  for (let i = 0; i < data.length; i++) out[i] = Math.fround(data[i]);
  return out;
}

function transpose(data: Float32Array, rows: number, cols: number): Float32Array {
  const out = new Float32Array(data.length);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) out[j * rows + i] = data[i * cols + j];
  }
  return out;
}

function checkSourceShape(name: string, got: number[], want: [number, number]): void {
  const flat = got.filter((d) => d !== 1);
  const wantFlat = want.filter((d) => d !== 1);
  const matches =
    (got.length === 2 && got[0] === want[0] && got[1] === want[1]) ||
    // tolerate leading singleton axes (cls_token often ships as (1,1,d))
    (flat.length === wantFlat.length && flat.every((d, i) => d === wantFlat[i])) ||
    (got.length === 1 && want[0] === 1 && got[0] === want[1]);
  if (!matches) {
    throw new MappingError(
      `shape conflict: ${name} has shape [${got}], expected [${want}] under the declared config`,
    );
  }
}

export interface MappingResult {
  mapped: MappedTensor[];
  unmapped: string[];
}

export function applyMapping(
  tensors: Map<string, TensorEntry>,
  config: ModelConfig,
): MappingResult {
  const produced = new Map<string, MappedTensor>();
  const unmapped: string[] = [];

  for (const [name, entry] of tensors) {
    let matched = false;
    for (const rule of RULES) {
      const m = name.match(rule.pattern);
      if (!m) continue;
      matched = true;
      for (const target of rule.targets(m, config)) {
        checkSourceShape(name, entry.shape, target.sourceShape);
        if (produced.has(target.name)) {
          throw new MappingError(
            `ambiguous mapping: both ${produced.get(target.name)!.source} and ${name} produce ${target.name}`,
          );
        }
        let values = toF32(entry.data);
        let [rows, cols] = target.sourceShape;
        if (target.rowSlice) {
          const [from, to] = target.rowSlice;
          if (rows === 1) {
            values = values.slice(from, to); // fused bias: slice the vector
            cols = to - from;
          } else {
            values = values.slice(from * cols, to * cols);
            rows = to - from;
          }
        }
        let shape: [number, number] = [rows, cols];
        if (target.transpose) {
          values = transpose(values, rows, cols);
          shape = [cols, rows];
        }
        produced.set(target.name, {
          source: name,
          target: target.name,
          transposed: target.transpose,
          shape,
          data: values,
        });
      }
      break; // first matching rule wins
    }
    if (!matched) unmapped.push(name);
  }
  return { mapped: [...produced.values()], unmapped };
}
