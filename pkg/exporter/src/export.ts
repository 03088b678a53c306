/**
 * Checkpoint export: safetensors state dict -> ingestion container.
 *
 * Every eligible 2-D tensor becomes one raw little-endian tensor file
 * plus a manifest entry. 1-D parameters (biases, norms) are skipped and
 * counted; tensors of three or more dimensions are skipped with a
 * warning unless flattening is requested, in which case trailing
 * dimensions fold into columns (a byte-level no-op for row-major data).
 *
 * LoRA detection pairs (A, B) adapters by their shared name prefix and
 * binds them to the base weight; complete triples share a pair_id in the
 * manifest so the consumer can merge W' = W + B @ A. Unpairable adapters
 * are never exported as dense layers (low-rank matrices would poison the
 * spectral analysis downstream) and never dropped silently: each one is
 * reported with a reason.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { LayerEntry, Manifest, MANIFEST_VERSION, manifestSchema } from "./manifest.js";
import { parseSafetensors, TensorRecord } from "./safetensors.js";

export class ExportError extends Error {}

export interface ExportRule {
  includePatterns: string[]; // name globs; empty means include everything
  blockRegex: RegExp | null; // capture group 1 (or full match) -> block_id
  lora: { aPattern: RegExp; bPattern: RegExp } | null;
  flatten: boolean;
}

export const DEFAULT_LORA_A = /\.lora_A(\.weight)?$/;
export const DEFAULT_LORA_B = /\.lora_B(\.weight)?$/;

export interface OrphanReport {
  name: string;
  reason: string;
}

export interface ExportResult {
  manifestPath: string;
  layers: LayerEntry[];
  skipped1d: number;
  skippedNd: number;
  flattened: number;
  orphans: OrphanReport[];
}

const DTYPE_MAP: Record<string, "f32" | "f64"> = { F32: "f32", F64: "f64" };

function globToRegex(pattern: string): RegExp {
  const escaped = pattern.replace(/[.+^${}()|[\]\\]/g, "\\$&");
  return new RegExp(`^${escaped.replace(/\*/g, ".*").replace(/\?/g, ".")}$`);
}

function safeFilename(name: string, index: number): string {
  const safe = name.replace(/[^A-Za-z0-9._-]/g, "_");
  return `${String(index).padStart(3, "0")}_${safe}.bin`;
}

interface Candidate {
  tensor: TensorRecord;
  rows: number;
  cols: number;
  dtype: "f32" | "f64";
}

function toCandidate(tensor: TensorRecord, shape: number[]): Candidate {
  const dtype = DTYPE_MAP[tensor.dtype];
  if (!dtype) {
    throw new ExportError(
      `tensor ${tensor.name}: unsupported dtype ${tensor.dtype} (container holds f32/f64 only)`
    );
  }
  return { tensor, rows: shape[0], cols: shape[1], dtype };
}

interface LoraPair {
  a?: Candidate;
  b?: Candidate;
}

export function exportCheckpoint(
  checkpointPath: string,
  rule: ExportRule,
  outDir: string,
  log: (line: string) => void = (line) => process.stderr.write(line + "\n")
): ExportResult {
  const tensors = parseSafetensors(readFileSync(checkpointPath));
  const includes = rule.includePatterns.map(globToRegex);
  const included = tensors.filter(
    (t) => includes.length === 0 || includes.some((re) => re.test(t.name))
  );

  let skipped1d = 0;
  let skippedNd = 0;
  let flattened = 0;
  const candidates: Candidate[] = [];
  for (const tensor of included) {
    if (tensor.shape.length === 2) {
      candidates.push(toCandidate(tensor, tensor.shape));
    } else if (tensor.shape.length < 2) {
      skipped1d += 1;
    } else if (rule.flatten) {
      const cols = tensor.shape.slice(1).reduce((a, b) => a * b, 1);
      candidates.push(toCandidate(tensor, [tensor.shape[0], cols]));
      flattened += 1;
    } else {
      log(`warning: skipping ${tensor.shape.length}-D tensor ${tensor.name} (use --flatten to fold)`);
      skippedNd += 1;
    }
  }

  // LoRA pairing by shared prefix
  const orphans: OrphanReport[] = [];
  const byName = new Map(candidates.map((c) => [c.tensor.name, c]));
  const pairs = new Map<string, LoraPair>();
  const adapterNames = new Set<string>();
  if (rule.lora) {
    for (const c of candidates) {
      const { name } = c.tensor;
      if (rule.lora.aPattern.test(name)) {
        const prefix = name.replace(rule.lora.aPattern, "");
        const pair = pairs.get(prefix) ?? {};
        pair.a = c;
        pairs.set(prefix, pair);
        adapterNames.add(name);
      } else if (rule.lora.bPattern.test(name)) {
        const prefix = name.replace(rule.lora.bPattern, "");
        const pair = pairs.get(prefix) ?? {};
        pair.b = c;
        pairs.set(prefix, pair);
        adapterNames.add(name);
      }
    }
  }

  const loraRole = new Map<string, { kind: "lora_base" | "lora_a" | "lora_b"; pairId: string }>();
  for (const [prefix, pair] of pairs) {
    const members = [pair.a, pair.b].filter((m): m is Candidate => m !== undefined);
    if (!pair.a || !pair.b) {
      const missing = pair.a ? "B" : "A";
      for (const m of members) {
        orphans.push({ name: m.tensor.name, reason: `no matching lora_${missing} for pair ${prefix}` });
      }
      continue;
    }
    const base = byName.get(`${prefix}.weight`) ?? byName.get(prefix);
    if (!base || adapterNames.has(base.tensor.name)) {
      for (const m of members) {
        orphans.push({ name: m.tensor.name, reason: `no base weight for pair ${prefix}` });
      }
      continue;
    }
    const r = pair.b.cols;
    const conforms =
      pair.a.rows === r &&
      pair.b.rows === base.rows &&
      pair.a.cols === base.cols &&
      r <= Math.min(base.rows, base.cols);
    if (!conforms) {
      for (const m of members) {
        orphans.push({
          name: m.tensor.name,
          reason:
            `adapters B ${pair.b.rows}x${pair.b.cols} @ A ${pair.a.rows}x${pair.a.cols} ` +
            `do not conform to base ${base.rows}x${base.cols}`,
        });
      }
      continue;
    }
    loraRole.set(base.tensor.name, { kind: "lora_base", pairId: prefix });
    loraRole.set(pair.a.tensor.name, { kind: "lora_a", pairId: prefix });
    loraRole.set(pair.b.tensor.name, { kind: "lora_b", pairId: prefix });
  }

  const orphanNames = new Set(orphans.map((o) => o.name));
  for (const orphan of orphans) {
    log(`warning: orphan adapter ${orphan.name}: ${orphan.reason}`);
  }

  mkdirSync(outDir, { recursive: true });
  const layers: LayerEntry[] = [];
  let index = 0;
  for (const c of candidates) {
    const { name } = c.tensor;
    if (orphanNames.has(name)) continue;
    if (adapterNames.has(name) && !loraRole.has(name)) continue; // unreachable guard
    const role = loraRole.get(name);
    const entry: LayerEntry = {
      name,
      kind: role?.kind ?? "dense",
      rows: c.rows,
      cols: c.cols,
      dtype: c.dtype,
      file: safeFilename(name, index),
    };
    if (role) entry.pair_id = role.pairId;
    if (rule.blockRegex && entry.kind !== "lora_a" && entry.kind !== "lora_b") {
      const match = rule.blockRegex.exec(name);
      if (match) entry.block_id = match[1] ?? match[0];
    }
    writeFileSync(join(outDir, entry.file), c.tensor.data);
    layers.push(entry);
    index += 1;
  }

  if (skipped1d > 0) log(`skipped ${skipped1d} 1-D tensors`);
  if (skippedNd > 0) log(`skipped ${skippedNd} tensors with 3+ dimensions`);
  if (flattened > 0) log(`flattened ${flattened} tensors with 3+ dimensions`);

  const manifest: Manifest = { version: MANIFEST_VERSION, layers };
  const checked = manifestSchema.safeParse(manifest);
  if (!checked.success) {
    throw new ExportError(`refusing to write invalid manifest: ${checked.error.message}`);
  }
  const manifestPath = join(outDir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
  return { manifestPath, layers, skipped1d, skippedNd, flattened, orphans };
}
