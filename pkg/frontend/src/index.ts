/**
 * Bindings for the actok action-chunk codec.
 *
 * A handle wraps a fitted codec model file; encode/decode are delegated to
 * the toolkit's CLI over its documented chunk/token record formats, so the
 * numeric path has exactly one implementation and token ids match the
 * primary tooling bit for bit. Set ACTOK_PYTHON to override the
 * interpreter used to invoke the CLI (default: python3).
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export class BindingError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "BindingError";
  }
}

export interface CodecHandle {
  readonly modelPath: string;
  readonly horizon: number;
  readonly actionDim: number;
  readonly scale: number;
  readonly clamp: number;
  readonly fingerprint: string;
  /** per-dimension normalization box: decoded values always lie inside it */
  readonly qLow: number[];
  readonly qHigh: number[];
  /** widest per-dimension normalization half-range, for the error bound */
  readonly maxHalfRange: number;
  readonly dctAxisLength: number;
  closed: boolean;
}

function pythonCommand(): { cmd: string; baseArgs: string[] } {
  const override = process.env.ACTOK_PYTHON;
  if (override) {
    const parts = override.split(" ").filter((p) => p.length > 0);
    return { cmd: parts[0], baseArgs: [...parts.slice(1), "-m", "actok.cli"] };
  }
  return { cmd: "python3", baseArgs: ["-m", "actok.cli"] };
}

function runCli(args: string[]): void {
  const { cmd, baseArgs } = pythonCommand();
  try {
    execFileSync(cmd, [...baseArgs, ...args], {
      stdio: ["ignore", "pipe", "pipe"],
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (err) {
    const stderr = (err as { stderr?: Buffer }).stderr?.toString() ?? String(err);
    throw new BindingError(`actok cli failed: ${stderr.trim()}`);
  }
}

/** Open a fitted codec model file and return a handle for encode/decode. */
export function openModel(modelPath: string): CodecHandle {
  let payload: {
    format?: string;
    horizon?: number;
    action_dim?: number;
    scale?: number;
    clamp?: number;
    fingerprint?: string;
    dct_axis?: string;
    q_low?: number[];
    q_high?: number[];
  };
  try {
    payload = JSON.parse(readFileSync(modelPath, "utf-8"));
  } catch (err) {
    throw new BindingError(`cannot read model file ${modelPath}: ${err}`);
  }
  if (payload.format !== "action-codec") {
    throw new BindingError(`${modelPath} is not an action-codec model file`);
  }
  const qLow = payload.q_low ?? [];
  const qHigh = payload.q_high ?? [];
  let maxHalfRange = 0;
  for (let d = 0; d < qLow.length; d += 1) {
    maxHalfRange = Math.max(maxHalfRange, (qHigh[d] - qLow[d]) / 2);
  }
  const horizon = payload.horizon ?? 0;
  const actionDim = payload.action_dim ?? 0;
  return {
    modelPath,
    horizon,
    actionDim,
    scale: payload.scale ?? 0,
    clamp: payload.clamp ?? 0,
    fingerprint: payload.fingerprint ?? "",
    qLow,
    qHigh,
    maxHalfRange,
    dctAxisLength: payload.dct_axis === "per-dimension" ? horizon : actionDim,
    closed: false,
  };
}

/** Mark a handle closed; further operations on it raise. */
export function closeModel(handle: CodecHandle): void {
  handle.closed = true;
}

/** Worst-case reconstruction error for unclipped, unsaturated chunks. */
export function roundtripBound(handle: CodecHandle): number {
  assertOpen(handle);
  return (Math.sqrt(handle.dctAxisLength) / (2 * handle.scale)) * handle.maxHalfRange;
}

function assertOpen(handle: CodecHandle): void {
  if (handle.closed) {
    throw new BindingError("operation on a closed codec handle");
  }
}

function checkChunkShape(handle: CodecHandle, chunk: number[][], where: string): void {
  if (!Array.isArray(chunk) || chunk.length !== handle.horizon) {
    throw new BindingError(
      `${where}: expected ${handle.horizon} rows, got ${Array.isArray(chunk) ? chunk.length : typeof chunk}`,
    );
  }
  for (const row of chunk) {
    if (!Array.isArray(row) || row.length !== handle.actionDim) {
      throw new BindingError(
        `${where}: expected rows of ${handle.actionDim} entries, got ${Array.isArray(row) ? row.length : typeof row}`,
      );
    }
    for (const v of row) {
      if (typeof v !== "number" || !Number.isFinite(v)) {
        throw new BindingError(`${where}: non-finite entry ${v}`);
      }
    }
  }
}

interface TokenRecord {
  trajectory: number;
  tokens: number[];
}

interface ChunkRecord {
  trajectory: number;
  values: number[][];
}

function withWorkDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "actok-bindings-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Encode a batch of (horizon x actionDim) chunks in one CLI invocation. */
export function encodeChunkBatch(handle: CodecHandle, chunks: number[][][]): number[][] {
  assertOpen(handle);
  chunks.forEach((chunk, i) => checkChunkShape(handle, chunk, `chunk ${i}`));
  if (chunks.length === 0) {
    return [];
  }
  return withWorkDir((dir) => {
    const input = join(dir, "chunks.jsonl");
    const output = join(dir, "tokens.jsonl");
    writeFileSync(
      input,
      chunks.map((values, i) => JSON.stringify({ trajectory: i, values })).join("\n") + "\n",
    );
    runCli(["encode", "--model", handle.modelPath, "--in", input,
            "--in-format", "chunks", "--out", output]);
    const records = readJsonl<TokenRecord>(output);
    if (records.length !== chunks.length) {
      throw new BindingError(
        `encode returned ${records.length} records for ${chunks.length} chunks`,
      );
    }
    return records.map((r) => r.tokens);
  });
}

/** Encode one chunk to its token sequence. */
export function encodeChunk(handle: CodecHandle, chunk: number[][]): number[] {
  return encodeChunkBatch(handle, [chunk])[0];
}

/** Decode a batch of token sequences in one CLI invocation. */
export function decodeTokenBatch(handle: CodecHandle, batches: number[][]): number[][][] {
  assertOpen(handle);
  batches.forEach((tokens, i) => {
    if (!Array.isArray(tokens) || tokens.some((t) => !Number.isInteger(t))) {
      throw new BindingError(`token sequence ${i} must be a list of integers`);
    }
  });
  if (batches.length === 0) {
    return [];
  }
  return withWorkDir((dir) => {
    const input = join(dir, "tokens.jsonl");
    const output = join(dir, "chunks.jsonl");
    writeFileSync(
      input,
      batches.map((tokens, i) => JSON.stringify({ trajectory: i, tokens })).join("\n") + "\n",
    );
    runCli(["decode", "--model", handle.modelPath, "--in", input, "--out", output]);
    const records = readJsonl<ChunkRecord>(output);
    if (records.length !== batches.length) {
      throw new BindingError(
        `decode returned ${records.length} records for ${batches.length} token sequences`,
      );
    }
    return records.map((r) => r.values);
  });
}

/** Decode one token sequence back to an (horizon x actionDim) chunk. */
export function decodeTokens(handle: CodecHandle, tokens: number[]): number[][] {
  return decodeTokenBatch(handle, [tokens])[0];
}

function readJsonl<T>(path: string): T[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as T);
}
