/**
 * Minimal safetensors reader/writer.
 *
 * Layout: an unsigned 64-bit little-endian header size, a UTF-8 JSON header
 * mapping tensor names to {dtype, shape, data_offsets}, then the raw data
 * section. Offsets are byte positions relative to the data section. Only
 * F32 and F64 tensors are handled; that covers the published checkpoints
 * this tool targets.
 */

export type Dtype = 'F32' | 'F64';

export interface TensorEntry {
  dtype: Dtype;
  shape: number[];
  /** Row-major values; Float32Array for F32, Float64Array for F64. */
  data: Float32Array | Float64Array;
}

const DTYPE_BYTES: Record<Dtype, number> = { F32: 4, F64: 8 };

export class SafetensorsError extends Error {}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function readSafetensors(buf: Buffer): Map<string, TensorEntry> {
  if (buf.length < 8) {
    throw new SafetensorsError('file too short for a safetensors header');
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new SafetensorsError(`header length ${headerLen} overruns the file`);
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString('utf-8'));
  } catch (e) {
    throw new SafetensorsError(`header is not valid JSON: ${e}`);
  }
  const data = buf.subarray(8 + headerLen);
  const out = new Map<string, TensorEntry>();
  for (const [name, raw] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const entry = raw as { dtype?: string; shape?: number[]; data_offsets?: [number, number] };
    if (!entry || !entry.dtype || !entry.shape || !entry.data_offsets) {
      throw new SafetensorsError(`tensor ${name}: malformed header entry`);
    }
    if (entry.dtype !== 'F32' && entry.dtype !== 'F64') {
      throw new SafetensorsError(`tensor ${name}: unsupported dtype ${entry.dtype} (only F32/F64)`);
    }
    const dtype = entry.dtype as Dtype;
    const [begin, end] = entry.data_offsets;
    const want = elementCount(entry.shape) * DTYPE_BYTES[dtype];
    if (begin < 0 || end > data.length || end - begin !== want) {
      throw new SafetensorsError(
        `tensor ${name}: data_offsets [${begin}, ${end}] inconsistent with shape [${entry.shape}]`,
      );
    }
    // copy into a fresh buffer so typed-array views never alias misaligned bytes
    const bytes = new Uint8Array(data.subarray(begin, end)).buffer;
    const values = dtype === 'F32' ? new Float32Array(bytes) : new Float64Array(bytes);
    out.set(name, { dtype, shape: [...entry.shape], data: values });
  }
  return out;
}

export function writeSafetensors(tensors: Map<string, TensorEntry>): Buffer {
  const header: Record<string, { dtype: Dtype; shape: number[]; data_offsets: [number, number] }> = {};
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const [name, t] of tensors) {
    const want = elementCount(t.shape);
    if (t.data.length !== want) {
      throw new SafetensorsError(`tensor ${name}: ${t.data.length} values do not fill shape [${t.shape}]`);
    }
    const bytes = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
    header[name] = { dtype: t.dtype, shape: [...t.shape], data_offsets: [offset, offset + bytes.length] };
    chunks.push(bytes);
    offset += bytes.length;
  }
  let json = Buffer.from(JSON.stringify(header), 'utf-8');
  const pad = (8 - (json.length % 8)) % 8; // spec pads headers with spaces
  if (pad) json = Buffer.concat([json, Buffer.alloc(pad, 0x20)]);
  const head = Buffer.alloc(8);
  head.writeBigUInt64LE(BigInt(json.length), 0);
  return Buffer.concat([head, json, ...chunks]);
}
