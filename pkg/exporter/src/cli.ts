/**
 * Command-line entry point.
 *
 * Usage:
 *   node dist/cli.js convert --checkpoint model.safetensors --out model.dkwt
 *       [--heads N] [--norm-placement pre|post] [--seq-tokens T] [--feature-dim F]
 *   node dist/cli.js export-features --archive feats.safetensors --out-dir dir
 *       [--seq-tokens T] [--feature-dim F]
 *
 * convert writes the DKWT container plus "<out>.manifest.json" listing every
 * mapped and unmapped checkpoint tensor.
 */

import { writeFileSync } from 'node:fs';

import { convertFile } from './convert.js';
import { exportFeatures, FeatureExportError } from './features.js';
import { MappingError } from './mapping.js';
import { SafetensorsError } from './safetensors.js';

interface Args {
  [key: string]: string | undefined;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const command = argv[0];
  const args: Args = {};
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) {
      throw new Error(`unexpected argument: ${arg}`);
    }
    args[arg.slice(2)] = argv[++i];
  }
  return { command, args };
}

function requireArg(args: Args, name: string): string {
  const v = args[name];
  if (!v) throw new Error(`--${name} is required`);
  return v;
}

function intArg(args: Args, name: string): number | undefined {
  const v = args[name];
  if (v === undefined) return undefined;
  const n = Number(v);
  if (!Number.isInteger(n) || n < 1) throw new Error(`--${name} must be a positive integer`);
  return n;
}

function cmdConvert(args: Args): number {
  const out = requireArg(args, 'out');
  const placement = args['norm-placement'];
  if (placement !== undefined && placement !== 'pre' && placement !== 'post') {
    throw new Error(`--norm-placement must be pre or post, got ${placement}`);
  }
  const { container, manifest } = convertFile(requireArg(args, 'checkpoint'), {
    heads: intArg(args, 'heads'),
    normPlacement: placement,
    seqTokens: intArg(args, 'seq-tokens'),
    featureDim: intArg(args, 'feature-dim'),
  });
  writeFileSync(out, container);
  writeFileSync(`${out}.manifest.json`, JSON.stringify(manifest, null, 2) + '\n');
  console.log(
    `wrote ${out} (${manifest.mapped.length} tensors from ${manifest.mapped_source_count} checkpoint` +
      ` parameters, ${manifest.unmapped.length} unmapped)`,
  );
  if (manifest.unmapped.length) {
    console.log(`unmapped: ${manifest.unmapped.join(', ')}`);
  }
  return 0;
}

function cmdExportFeatures(args: Args): number {
  const result = exportFeatures(
    requireArg(args, 'archive'),
    requireArg(args, 'out-dir'),
    intArg(args, 'seq-tokens') ?? 98,
    intArg(args, 'feature-dim') ?? 40,
  );
  if (result.warning) console.warn(`warning: ${result.warning}`);
  console.log(`wrote ${result.written.length} feature files`);
  return 0;
}

export function main(argv: string[]): number {
  try {
    const { command, args } = parseArgs(argv);
    if (command === 'convert') return cmdConvert(args);
    if (command === 'export-features') return cmdExportFeatures(args);
    console.error('usage: cli.js <convert|export-features> [options]');
    return 2;
  } catch (e) {
    if (e instanceof MappingError || e instanceof SafetensorsError || e instanceof FeatureExportError) {
      console.error(`error: ${e.message}`);
      return 1;
    }
    if (e instanceof Error && (e.message.includes('required') || e.message.includes('must be'))) {
      console.error(`error: ${e.message}`);
      return 2;
    }
    throw e;
  }
}

const isDirectRun = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
