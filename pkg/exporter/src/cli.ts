#!/usr/bin/env node
/**
 * Convert a safetensors checkpoint into the ingestion container.
 *
 * Usage:
 *   specbalance-export --checkpoint model.safetensors --out ckpt/ [options]
 *
 * Options:
 *   --checkpoint <file>   input safetensors state dict (required)
 *   --out <dir>           output container directory (required)
 *   --include <glob>      tensor-name glob, repeatable (default: all)
 *   --block-regex <re>    regex whose first capture group becomes block_id
 *   --lora                detect LoRA adapter pairs (suffixes .lora_A/.lora_B)
 *   --lora-a <re>         override the adapter-A suffix pattern
 *   --lora-b <re>         override the adapter-B suffix pattern
 *   --flatten             fold trailing dims of 3+-D tensors into columns
 *   --help                show this message
 */

import { exportCheckpoint, DEFAULT_LORA_A, DEFAULT_LORA_B, ExportError } from "./export.js";

interface Args {
  checkpoint?: string;
  out?: string;
  include: string[];
  blockRegex?: string;
  lora: boolean;
  loraA?: string;
  loraB?: string;
  flatten: boolean;
  help: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { include: [], lora: false, flatten: false, help: false };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--checkpoint":
        args.checkpoint = argv[++i];
        break;
      case "--out":
        args.out = argv[++i];
        break;
      case "--include":
        args.include.push(argv[++i]);
        break;
      case "--block-regex":
        args.blockRegex = argv[++i];
        break;
      case "--lora":
        args.lora = true;
        break;
      case "--lora-a":
        args.loraA = argv[++i];
        break;
      case "--lora-b":
        args.loraB = argv[++i];
        break;
      case "--flatten":
        args.flatten = true;
        break;
      case "--help":
      case "-h":
        args.help = true;
        break;
      default:
        console.error(`unknown argument: ${argv[i]}`);
        process.exit(2);
    }
  }
  return args;
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  if (args.help || !args.checkpoint || !args.out) {
    const text = `usage: specbalance-export --checkpoint <file.safetensors> --out <dir>
       [--include <glob>]... [--block-regex <re>] [--lora]
       [--lora-a <re>] [--lora-b <re>] [--flatten]`;
    if (args.help) {
      console.log(text);
      return 0;
    }
    console.error(text);
    return 2;
  }
  try {
    const result = exportCheckpoint(
      args.checkpoint,
      {
        includePatterns: args.include,
        blockRegex: args.blockRegex ? new RegExp(args.blockRegex) : null,
        lora: args.lora
          ? {
              aPattern: args.loraA ? new RegExp(args.loraA) : DEFAULT_LORA_A,
              bPattern: args.loraB ? new RegExp(args.loraB) : DEFAULT_LORA_B,
            }
          : null,
        flatten: args.flatten,
      },
      args.out
    );
    console.log(
      `wrote ${result.layers.length} layers to ${result.manifestPath}` +
        (result.orphans.length ? ` (${result.orphans.length} orphan adapters reported)` : "")
    );
    return 0;
  } catch (err) {
    if (err instanceof ExportError || (err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

if (process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!)) {
  process.exit(main(process.argv.slice(2)));
}
