/**
 * The ingestion container manifest: types and validation.
 *
 * Mirrors the consumer's published JSON Schema (version 1): raw
 * little-endian row-major tensor files plus a manifest listing name,
 * kind, shape, dtype, file, and optional block/LoRA grouping. Every
 * manifest is validated before it is written.
 */

import { z } from "zod";

export const LAYER_KINDS = ["dense", "lora_base", "lora_a", "lora_b"] as const;
export type LayerKind = (typeof LAYER_KINDS)[number];

export const layerEntrySchema = z
  .object({
    name: z.string().min(1),
    kind: z.enum(LAYER_KINDS),
    rows: z.number().int().min(1),
    cols: z.number().int().min(1),
    dtype: z.enum(["f32", "f64"]),
    file: z.string().min(1),
    block_id: z.string().optional(),
    pair_id: z.string().optional(),
  })
  .strict();

export const manifestSchema = z
  .object({
    version: z.number().int().min(1),
    layers: z.array(layerEntrySchema),
  })
  .strict()
  .superRefine((manifest, ctx) => {
    const names = new Set<string>();
    for (const layer of manifest.layers) {
      if (names.has(layer.name)) {
        ctx.addIssue({ code: z.ZodIssueCode.custom, message: `duplicate layer name ${layer.name}` });
      }
      names.add(layer.name);
      if (layer.kind !== "dense" && !layer.pair_id) {
        ctx.addIssue({
          code: z.ZodIssueCode.custom,
          message: `layer ${layer.name}: LoRA kinds require a pair_id`,
        });
      }
    }
  });

export type LayerEntry = z.infer<typeof layerEntrySchema>;
export type Manifest = z.infer<typeof manifestSchema>;

export const MANIFEST_VERSION = 1;
