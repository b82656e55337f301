/**
 * Writers for the engine's on-disk formats.
 *
 * DKWT weight container: magic "DKWT", u32 LE version (1), u64 LE header
 * length, UTF-8 JSON header {dtype: "f32le", config, tensors: [{name,
 * shape, offset}]}, then binary32 little-endian payload tiled exactly by
 * the listed tensors (offsets are bytes from the payload start).
 *
 * DKWF feature file: magic "DKWF", u32 version, u32 rows, u32 cols, then
 * rows*cols binary32 little-endian values.
 */

export interface ModelConfig {
  seq_tokens: number;
  feature_dim: number;
  embed_dim: number;
  mlp_dim: number;
  heads: number;
  layers: number;
  num_classes: number;
  norm_placement: 'post' | 'pre';
  last_layer_opt: boolean;
  precision: 'single' | 'double';
}

export interface NamedTensor {
  name: string;
  shape: [number, number];
  data: Float32Array;
}

const VERSION = 1;

export function writeDkwt(config: ModelConfig, tensors: NamedTensor[]): Buffer {
  const entries: { name: string; shape: number[]; offset: number }[] = [];
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const t of tensors) {
    if (t.data.length !== t.shape[0] * t.shape[1]) {
      throw new Error(`tensor ${t.name}: ${t.data.length} values do not fill ${t.shape[0]}x${t.shape[1]}`);
    }
    entries.push({ name: t.name, shape: [...t.shape], offset });
    const bytes = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
    chunks.push(bytes);
    offset += bytes.length;
  }
  const header = Buffer.from(
    JSON.stringify({ dtype: 'f32le', config, tensors: entries }),
    'utf-8',
  );
  const fixed = Buffer.alloc(16);
  fixed.write('DKWT', 0, 'ascii');
  fixed.writeUInt32LE(VERSION, 4);
  fixed.writeBigUInt64LE(BigInt(header.length), 8);
  return Buffer.concat([fixed, header, ...chunks]);
}

export function writeDkwf(rows: number, cols: number, data: Float32Array): Buffer {
  if (data.length !== rows * cols) {
    throw new Error(`feature matrix: ${data.length} values do not fill ${rows}x${cols}`);
  }
  const fixed = Buffer.alloc(16);
  fixed.write('DKWF', 0, 'ascii');
  fixed.writeUInt32LE(VERSION, 4);
  fixed.writeUInt32LE(rows, 8);
  fixed.writeUInt32LE(cols, 12);
  return Buffer.concat([fixed, Buffer.from(data.buffer, data.byteOffset, data.byteLength)]);
}

/** Canonical container listing order for a given architecture. */
export function requiredTensorNames(config: ModelConfig, withAttnBias: boolean, withHeadBias: boolean): string[] {
  const names = ['embed.w0', 'embed.class', 'embed.pos'];
  for (let i = 0; i < config.layers; i++) {
    for (const short of ['wq', 'wk', 'wv', 'wp']) {
      names.push(`layer.${i}.attn.${short}`);
      if (withAttnBias) names.push(`layer.${i}.attn.${short}.bias`);
    }
    names.push(`layer.${i}.ln1.gamma`, `layer.${i}.ln1.beta`);
    names.push(`layer.${i}.ln2.gamma`, `layer.${i}.ln2.beta`);
    names.push(`layer.${i}.mlp.w1`, `layer.${i}.mlp.b1`, `layer.${i}.mlp.w2`, `layer.${i}.mlp.b2`);
  }
  names.push('head.w');
  if (withHeadBias) names.push('head.b');
  return names;
}
