/**
 * One-shot checkpoint conversion: safetensors in, DKWT container plus a
 * JSON manifest out. Architecture dimensions are inferred from tensor
 * shapes where possible (head count is not inferable and comes from the
 * overrides, defaulting to the reference three-head setup).
 */

import { readFileSync } from 'node:fs';

import { ModelConfig, NamedTensor, requiredTensorNames, writeDkwt } from './dkwt.js';
import { MappedTensor, MappingError, applyMapping } from './mapping.js';
import { TensorEntry, readSafetensors } from './safetensors.js';

export interface ConfigOverrides {
  heads?: number;
  normPlacement?: 'post' | 'pre';
  seqTokens?: number;
  featureDim?: number;
}

export interface Manifest {
  config: ModelConfig;
  source_tensor_count: number;
  /** distinct checkpoint tensors consumed; fused tensors feed several targets */
  mapped_source_count: number;
  mapped: { source: string; target: string; transposed: boolean; shape: number[] }[];
  unmapped: string[];
}

export interface ConvertResult {
  container: Buffer;
  manifest: Manifest;
}

function inferConfig(tensors: Map<string, TensorEntry>, overrides: ConfigOverrides): ModelConfig {
  const cls = tensors.get('cls_token') ?? tensors.get('class_token') ?? tensors.get('class_embedding');
  if (!cls) throw new MappingError('missing tensor: no class token (cls_token) in checkpoint');
  const embedDim = cls.shape[cls.shape.length - 1];

  const pos = tensors.get('pos_embed') ?? tensors.get('pos_embedding') ?? tensors.get('positional_embedding');
  if (!pos) throw new MappingError('missing tensor: no positional embedding (pos_embed) in checkpoint');
  const seqTokens = overrides.seqTokens ?? pos.shape[pos.shape.length - 2] - 1;

  const patch =
    tensors.get('patch_embed.weight') ??
    tensors.get('to_patch_embedding.weight') ??
    tensors.get('input_proj.weight');
  if (!patch) throw new MappingError('missing tensor: no input projection (patch_embed.weight) in checkpoint');
  const featureDim = overrides.featureDim ?? patch.shape[1];

  let layers = 0;
  for (const name of tensors.keys()) {
    const m = name.match(/^blocks\.(\d+)\./);
    if (m) layers = Math.max(layers, Number(m[1]) + 1);
  }
  if (layers === 0) throw new MappingError('missing tensor: no encoder blocks (blocks.N.*) in checkpoint');

  const fc1 = tensors.get('blocks.0.mlp.fc1.weight');
  if (!fc1) throw new MappingError('missing tensor: blocks.0.mlp.fc1.weight');
  const mlpDim = fc1.shape[0];

  const head = tensors.get('head.weight');
  if (!head) throw new MappingError('missing tensor: head.weight');
  const numClasses = head.shape[0];

  return {
    seq_tokens: seqTokens,
    feature_dim: featureDim,
    embed_dim: embedDim,
    mlp_dim: mlpDim,
    heads: overrides.heads ?? 3,
    layers,
    num_classes: numClasses,
    // released checkpoints of this family are pre-norm
    norm_placement: overrides.normPlacement ?? 'pre',
    last_layer_opt: false,
    precision: 'single',
  };
}

export function convertCheckpoint(
  tensors: Map<string, TensorEntry>,
  overrides: ConfigOverrides = {},
): ConvertResult {
  const config = inferConfig(tensors, overrides);
  if (config.embed_dim % config.heads !== 0) {
    throw new MappingError(
      `embed dim ${config.embed_dim} is not divisible by ${config.heads} heads; pass --heads`,
    );
  }
  const { mapped, unmapped } = applyMapping(tensors, config);

  const byTarget = new Map<string, MappedTensor>(mapped.map((t) => [t.target, t]));
  const withAttnBias = byTarget.has('layer.0.attn.wq.bias');
  const withHeadBias = byTarget.has('head.b');
  const required = requiredTensorNames(config, withAttnBias, withHeadBias);
  const missing = required.filter((n) => !byTarget.has(n));
  if (missing.length) {
    throw new MappingError(`missing tensor: checkpoint produced no ${missing.join(', ')}`);
  }
  const extra = [...byTarget.keys()].filter((n) => !required.includes(n));
  if (extra.length) {
    throw new MappingError(
      `inconsistent bias coverage: ${extra.join(', ')} mapped but not part of a complete set`,
    );
  }

  const ordered: NamedTensor[] = required.map((name) => {
    const t = byTarget.get(name)!;
    return { name, shape: t.shape, data: t.data };
  });
  const container = writeDkwt(config, ordered);
  const sources = new Set(mapped.map((t) => t.source));
  const manifest: Manifest = {
    config,
    source_tensor_count: tensors.size,
    mapped_source_count: sources.size,
    mapped: required.map((name) => {
      const t = byTarget.get(name)!;
      return { source: t.source, target: t.target, transposed: t.transposed, shape: [...t.shape] };
    }),
    unmapped: [...unmapped].sort(),
  };
  return { container, manifest };
}

export function convertFile(checkpointPath: string, overrides: ConfigOverrides = {}): ConvertResult {
  const tensors = readSafetensors(readFileSync(checkpointPath));
  return convertCheckpoint(tensors, overrides);
}
