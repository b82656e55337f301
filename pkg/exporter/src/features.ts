/**
 * Repackages a precomputed feature archive (safetensors, one T x F matrix
 * per clip) into one DKWF file per clip. Tensor names encode the label,
 * either as "label/clip-id" or "label__clip-id"; the output filename is
 * "<label>__<clip-id>.dkwf" so the engine's sweep tool can derive its
 * accuracy column. No feature extraction happens here; matrices are taken
 * as-is (wider floats round to binary32).
 */

import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { writeDkwf } from './dkwt.js';
import { readSafetensors } from './safetensors.js';

export class FeatureExportError extends Error {}

function sanitize(part: string): string {
  return part.replace(/[^A-Za-z0-9_.-]+/g, '-');
}

export interface FeatureExportResult {
  written: string[];
  warning?: string;
}

export function exportFeatures(
  archivePath: string,
  outDir: string,
  seqTokens = 98,
  featureDim = 40,
): FeatureExportResult {
  const tensors = readSafetensors(readFileSync(archivePath));
  if (tensors.size === 0) {
    return { written: [], warning: `${archivePath}: archive holds no feature matrices` };
  }
  mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  for (const [name, entry] of tensors) {
    if (entry.shape.length !== 2 || entry.shape[0] !== seqTokens || entry.shape[1] !== featureDim) {
      throw new FeatureExportError(
        `${name}: feature matrix is [${entry.shape}], expected [${seqTokens}, ${featureDim}]`,
      );
    }
    const sep = name.includes('/') ? '/' : name.includes('__') ? '__' : null;
    const [label, clip] = sep ? [name.slice(0, name.indexOf(sep)), name.slice(name.indexOf(sep) + sep.length)] : [name, 'clip'];
    const data = entry.data instanceof Float32Array ? entry.data : Float32Array.from(entry.data, Math.fround);
    const file = join(outDir, `${sanitize(label)}__${sanitize(clip)}.dkwf`);
    writeFileSync(file, writeDkwf(seqTokens, featureDim, data));
    written.push(file);
  }
  return { written };
}
