import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { DEFAULT_LORA_A, DEFAULT_LORA_B, ExportError, ExportRule, exportCheckpoint } from "../src/export.js";
import { manifestSchema } from "../src/manifest.js";
import { serializeSafetensors, parseSafetensors, TensorRecord } from "../src/safetensors.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function f32Tensor(name: string, shape: number[], seed: number): TensorRecord {
  const rand = mulberry32(seed);
  const count = shape.reduce((a, b) => a * b, 1);
  const values = new Float32Array(count);
  for (let i = 0; i < count; i++) values[i] = rand() * 2 - 1;
  return { name, dtype: "F32", shape, data: Buffer.from(values.buffer) };
}

function f64Tensor(name: string, shape: number[], seed: number): TensorRecord {
  const rand = mulberry32(seed);
  const count = shape.reduce((a, b) => a * b, 1);
  const values = new Float64Array(count);
  for (let i = 0; i < count; i++) values[i] = rand() * 2 - 1;
  return { name, dtype: "F64", shape, data: Buffer.from(values.buffer) };
}

function writeFixture(dir: string, tensors: TensorRecord[]): string {
  const path = join(dir, "model.safetensors");
  writeFileSync(path, serializeSafetensors(tensors));
  return path;
}

function workdir(): string {
  return mkdtempSync(join(tmpdir(), "exporter-test-"));
}

const NO_RULES: ExportRule = { includePatterns: [], blockRegex: null, lora: null, flatten: false };
const LORA_RULES: ExportRule = {
  ...NO_RULES,
  lora: { aPattern: DEFAULT_LORA_A, bPattern: DEFAULT_LORA_B },
};

function analyzeWithPrimary(manifestPath: string, outPath: string): Record<string, unknown> {
  execFileSync("python3", ["-m", "specbalance", "analyze", "--manifest", manifestPath, "--output", outPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  return JSON.parse(readFileSync(outPath, "utf8"));
}

describe("safetensors round trip", () => {
  it("serialize then parse preserves names, shapes, and bytes", () => {
    const tensors = [f32Tensor("a", [4, 6], 1), f64Tensor("b", [3, 3], 2)];
    const parsed = parseSafetensors(serializeSafetensors(tensors));
    expect(parsed.map((t) => t.name)).toEqual(["a", "b"]);
    expect(parsed[0].shape).toEqual([4, 6]);
    expect(parsed[0].data.equals(tensors[0].data)).toBe(true);
    expect(parsed[1].data.equals(tensors[1].data)).toBe(true);
  });

  it("rejects truncated buffers and inconsistent offsets", () => {
    expect(() => parseSafetensors(Buffer.from([1, 2, 3]))).toThrow(/not a safetensors/);
    const good = serializeSafetensors([f32Tensor("a", [2, 2], 3)]);
    expect(() => parseSafetensors(good.subarray(0, 12))).toThrow(/corrupt/);
  });
});

describe("MLP export round trip", () => {
  it("exports a 2-layer MLP as dense entries with byte-exact tensors", () => {
    const dir = workdir();
    const w0 = f32Tensor("mlp.0.weight", [16, 32], 10);
    const w1 = f32Tensor("mlp.1.weight", [32, 16], 11);
    const b0 = f32Tensor("mlp.0.bias", [32], 12);
    const checkpoint = writeFixture(dir, [w0, b0, w1]);

    const out = join(dir, "ckpt");
    const result = exportCheckpoint(checkpoint, NO_RULES, out, () => {});
    expect(result.layers.map((l) => l.kind)).toEqual(["dense", "dense"]);
    expect(result.skipped1d).toBe(1);

    const manifest = manifestSchema.parse(JSON.parse(readFileSync(result.manifestPath, "utf8")));
    expect(manifest.version).toBe(1);
    for (const [layer, source] of [
      [manifest.layers[0], w0],
      [manifest.layers[1], w1],
    ] as const) {
      expect(layer.name).toBe(source.name);
      expect([layer.rows, layer.cols]).toEqual(source.shape);
      expect(readFileSync(join(out, layer.file)).equals(source.data)).toBe(true);
    }
  });

  it("loads via the primary ingestion module with matching metrics", () => {
    const dir = workdir();
    const checkpoint = writeFixture(dir, [
      f32Tensor("mlp.0.weight", [16, 32], 20),
      f32Tensor("mlp.1.weight", [32, 16], 21),
    ]);
    const result = exportCheckpoint(checkpoint, NO_RULES, join(dir, "ckpt"), () => {});
    const report = analyzeWithPrimary(result.manifestPath, join(dir, "report.json"));
    const layers = report.per_layer as Array<{ layer: string; alpha_hill: number }>;
    expect(layers.map((l) => l.layer)).toEqual(["mlp.0.weight", "mlp.1.weight"]);
    for (const layer of layers) expect(layer.alpha_hill).toBeGreaterThan(1);
  });

  it("preserves f64 tensors byte-exactly", () => {
    const dir = workdir();
    const w = f64Tensor("wide.weight", [8, 8], 30);
    const result = exportCheckpoint(writeFixture(dir, [w]), NO_RULES, join(dir, "ckpt"), () => {});
    expect(result.layers[0].dtype).toBe("f64");
    expect(readFileSync(join(dir, "ckpt", result.layers[0].file)).equals(w.data)).toBe(true);
  });
});

describe("LoRA export", () => {
  function loraFixture(dir: string) {
    const base = f32Tensor("enc.0.attn.weight", [16, 16], 40);
    const a = f32Tensor("enc.0.attn.lora_A.weight", [2, 16], 41);
    const b = f32Tensor("enc.0.attn.lora_B.weight", [16, 2], 42);
    const dense = f32Tensor("enc.1.ffn.weight", [16, 16], 43);
    return { checkpoint: writeFixture(dir, [base, a, b, dense]), base, a, b, dense };
  }

  it("pairs adapters with their base under a shared pair_id", () => {
    const dir = workdir();
    const { checkpoint, base, a, b } = loraFixture(dir);
    const result = exportCheckpoint(checkpoint, LORA_RULES, join(dir, "ckpt"), () => {});
    const byName = new Map(result.layers.map((l) => [l.name, l]));
    expect(byName.get(base.name)?.kind).toBe("lora_base");
    expect(byName.get(a.name)?.kind).toBe("lora_a");
    expect(byName.get(b.name)?.kind).toBe("lora_b");
    const pairIds = new Set(
      [base.name, a.name, b.name].map((n) => byName.get(n)?.pair_id)
    );
    expect(pairIds.size).toBe(1);
    expect(byName.get("enc.1.ffn.weight")?.kind).toBe("dense");

    for (const source of [base, a, b]) {
      const layer = byName.get(source.name)!;
      expect(readFileSync(join(dir, "ckpt", layer.file)).equals(source.data)).toBe(true);
    }
  });

  it("round-trips through the primary module, which merges the triple", () => {
    const dir = workdir();
    const { checkpoint } = loraFixture(dir);
    const result = exportCheckpoint(checkpoint, LORA_RULES, join(dir, "ckpt"), () => {});
    const report = analyzeWithPrimary(result.manifestPath, join(dir, "report.json"));
    const layers = report.per_layer as Array<{ layer: string }>;
    // adapters disappear into the merged base on load
    expect(layers.map((l) => l.layer)).toEqual(["enc.0.attn.weight", "enc.1.ffn.weight"]);
  });

  it("without --lora everything exports as dense", () => {
    const dir = workdir();
    const { checkpoint } = loraFixture(dir);
    const result = exportCheckpoint(checkpoint, NO_RULES, join(dir, "ckpt"), () => {});
    expect(new Set(result.layers.map((l) => l.kind))).toEqual(new Set(["dense"]));
  });

  it("reports orphan adapters instead of dropping them silently", () => {
    const dir = workdir();
    const lines: string[] = [];
    const checkpoint = writeFixture(dir, [
      f32Tensor("enc.0.attn.weight", [16, 16], 50),
      f32Tensor("enc.0.attn.lora_A.weight", [2, 16], 51), // no B
      f32Tensor("enc.9.attn.lora_A.weight", [2, 16], 52), // no base either
      f32Tensor("enc.9.attn.lora_B.weight", [16, 2], 53),
    ]);
    const result = exportCheckpoint(checkpoint, LORA_RULES, join(dir, "ckpt"), (l) => lines.push(l));
    expect(result.orphans.map((o) => o.name).sort()).toEqual([
      "enc.0.attn.lora_A.weight",
      "enc.9.attn.lora_A.weight",
      "enc.9.attn.lora_B.weight",
    ]);
    expect(lines.join("\n")).toContain("orphan adapter");
    // the base of the incomplete pair is still exported, as a dense layer
    expect(result.layers.map((l) => l.name)).toEqual(["enc.0.attn.weight"]);
  });

  it("reports non-conforming adapter shapes as orphans", () => {
    const dir = workdir();
    const checkpoint = writeFixture(dir, [
      f32Tensor("enc.0.attn.weight", [16, 16], 60),
      f32Tensor("enc.0.attn.lora_A.weight", [3, 16], 61),
      f32Tensor("enc.0.attn.lora_B.weight", [16, 2], 62), // rank 2 vs 3
    ]);
    const result = exportCheckpoint(checkpoint, LORA_RULES, join(dir, "ckpt"), () => {});
    expect(result.orphans).toHaveLength(2);
    expect(result.orphans[0].reason).toContain("do not conform");
    expect(result.layers.map((l) => l.kind)).toEqual(["dense"]);
  });
});

describe("shape and filter handling", () => {
  it("skips 3+-D tensors by default and flattens on request", () => {
    const dir = workdir();
    const conv = f32Tensor("conv.weight", [4, 3, 5], 70);
    const checkpoint = writeFixture(dir, [conv, f32Tensor("fc.weight", [8, 8], 71)]);

    const lines: string[] = [];
    const skipped = exportCheckpoint(checkpoint, NO_RULES, join(dir, "a"), (l) => lines.push(l));
    expect(skipped.skippedNd).toBe(1);
    expect(skipped.layers.map((l) => l.name)).toEqual(["fc.weight"]);
    expect(lines.join("\n")).toContain("conv.weight");

    const flat = exportCheckpoint(checkpoint, { ...NO_RULES, flatten: true }, join(dir, "b"), () => {});
    expect(flat.flattened).toBe(1);
    const layer = flat.layers.find((l) => l.name === "conv.weight")!;
    expect([layer.rows, layer.cols]).toEqual([4, 15]);
    expect(readFileSync(join(dir, "b", layer.file)).equals(conv.data)).toBe(true);
  });

  it("extracts block ids with the configured regex", () => {
    const dir = workdir();
    const checkpoint = writeFixture(dir, [
      f32Tensor("enc.0.w", [8, 8], 80),
      f32Tensor("enc.1.w", [8, 8], 81),
      f32Tensor("head.w", [8, 8], 82),
    ]);
    const rule: ExportRule = { ...NO_RULES, blockRegex: /enc\.(\d+)\./ };
    const result = exportCheckpoint(checkpoint, rule, join(dir, "ckpt"), () => {});
    expect(result.layers.map((l) => l.block_id)).toEqual(["0", "1", undefined]);
  });

  it("honors include patterns", () => {
    const dir = workdir();
    const checkpoint = writeFixture(dir, [
      f32Tensor("enc.0.w", [8, 8], 90),
      f32Tensor("dec.0.w", [8, 8], 91),
    ]);
    const rule: ExportRule = { ...NO_RULES, includePatterns: ["enc.*"] };
    const result = exportCheckpoint(checkpoint, rule, join(dir, "ckpt"), () => {});
    expect(result.layers.map((l) => l.name)).toEqual(["enc.0.w"]);
  });

  it("rejects unsupported dtypes with the tensor name", () => {
    const dir = workdir();
    const half: TensorRecord = {
      name: "half.weight",
      dtype: "F16",
      shape: [2, 2],
      data: Buffer.alloc(8),
    };
    const checkpoint = writeFixture(dir, [half]);
    expect(() => exportCheckpoint(checkpoint, NO_RULES, join(dir, "ckpt"), () => {})).toThrow(
      ExportError
    );
    expect(() => exportCheckpoint(checkpoint, NO_RULES, join(dir, "ckpt"), () => {})).toThrow(
      /half\.weight/
    );
  });
});

describe("command-line interface", () => {
  it("exports through the built binary", () => {
    const dir = workdir();
    const checkpoint = writeFixture(dir, [
      f32Tensor("enc.0.attn.weight", [16, 16], 100),
      f32Tensor("enc.0.attn.lora_A.weight", [2, 16], 101),
      f32Tensor("enc.0.attn.lora_B.weight", [16, 2], 102),
    ]);
    const out = join(dir, "ckpt");
    const stdout = execFileSync(
      "node",
      [
        join(__dirname, "..", "dist", "cli.js"),
        "--checkpoint", checkpoint,
        "--out", out,
        "--lora",
        "--block-regex", "enc\\.(\\d+)\\.",
      ],
      { encoding: "utf8" }
    );
    expect(stdout).toContain("wrote 3 layers");
    const manifest = manifestSchema.parse(JSON.parse(readFileSync(join(out, "manifest.json"), "utf8")));
    expect(manifest.layers.map((l) => l.kind).sort()).toEqual(["lora_a", "lora_b", "lora_base"]);
    expect(manifest.layers.find((l) => l.kind === "lora_base")?.block_id).toBe("0");
  });

  it("exits 2 on missing arguments", () => {
    expect(() =>
      execFileSync("node", [join(__dirname, "..", "dist", "cli.js"), "--checkpoint", "x"], {
        stdio: "pipe",
      })
    ).toThrow();
  });
});
