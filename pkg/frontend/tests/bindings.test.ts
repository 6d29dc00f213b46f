import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  BindingError,
  CodecHandle,
  closeModel,
  decodeTokenBatch,
  decodeTokens,
  encodeChunk,
  encodeChunkBatch,
  openModel,
  roundtripBound,
} from "../src/index";

const PYTHON = process.env.ACTOK_PYTHON ?? "python3";

function cli(args: string[]): void {
  execFileSync(PYTHON, ["-m", "actok.cli", ...args], {
    stdio: ["ignore", "pipe", "pipe"],
    maxBuffer: 64 * 1024 * 1024,
  });
}

// deterministic 32-bit generator so the 100 parity chunks are reproducible
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

let workDir: string;
let modelPath: string;
let handle: CodecHandle;
let chunks: number[][][];

beforeAll(() => {
  workDir = mkdtempSync(join(tmpdir(), "actok-frontend-"));
  const suite = join(workDir, "suite.jsonl");
  const demos = join(workDir, "demos.jsonl");
  const models = join(workDir, "models");
  cli(["gen-suite", "--out", suite, "--seed", "3", "--singles", "4"]);
  cli(["gen-demos", "--suite", suite, "--out", demos, "--num", "30", "--seed", "7"]);
  cli(["fit", "--dataset", demos, "--out-dir", models, "--horizon", "5"]);
  modelPath = join(models, "codec.json");
  handle = openModel(modelPath);

  const rand = mulberry32(20240607);
  chunks = [];
  for (let i = 0; i < 100; i += 1) {
    const chunk: number[][] = [];
    for (let t = 0; t < handle.horizon; t += 1) {
      const row: number[] = [];
      for (let d = 0; d < handle.actionDim; d += 1) {
        row.push(Math.round((rand() * 0.12 - 0.06) * 1e6) / 1e6);
      }
      chunk.push(row);
    }
    chunks.push(chunk);
  }
}, 120_000);

afterAll(() => {
  rmSync(workDir, { recursive: true, force: true });
});

describe("model handles", () => {
  it("expose the chunk spec and fingerprint", () => {
    expect(handle.horizon).toBe(5);
    expect(handle.actionDim).toBe(7);
    expect(handle.fingerprint).toHaveLength(64);
    expect(roundtripBound(handle)).toBeGreaterThan(0);
  });

  it("reject non-model files", () => {
    const bogus = join(workDir, "bogus.json");
    writeFileSync(bogus, JSON.stringify({ format: "something-else" }));
    expect(() => openModel(bogus)).toThrow(BindingError);
  });
});

describe("token parity with the primary tooling", () => {
  it("encodes 100 chunks to bit-identical token ids", () => {
    const viaBindings = encodeChunkBatch(handle, chunks);

    const input = join(workDir, "parity_chunks.jsonl");
    const output = join(workDir, "parity_tokens.jsonl");
    writeFileSync(
      input,
      chunks.map((values, i) => JSON.stringify({ trajectory: i, values })).join("\n") + "\n",
    );
    cli(["encode", "--model", modelPath, "--in", input, "--in-format", "chunks",
         "--out", output]);
    const direct = readFileSync(output, "utf-8")
      .split("\n")
      .filter((l) => l.trim().length > 0)
      .map((l) => JSON.parse(l).tokens as number[]);

    expect(viaBindings).toStrictEqual(direct);
  }, 60_000);

  it("decodes tokens to arrays matching the primary decode within 1e-12", () => {
    const tokens = encodeChunkBatch(handle, chunks);
    const viaBindings = decodeTokenBatch(handle, tokens);

    const input = join(workDir, "parity_tokens2.jsonl");
    const output = join(workDir, "parity_decoded.jsonl");
    writeFileSync(
      input,
      tokens.map((t, i) => JSON.stringify({ trajectory: i, tokens: t })).join("\n") + "\n",
    );
    cli(["decode", "--model", modelPath, "--in", input, "--out", output]);
    const direct = readFileSync(output, "utf-8")
      .split("\n")
      .filter((l) => l.trim().length > 0)
      .map((l) => JSON.parse(l).values as number[][]);

    expect(viaBindings.length).toBe(direct.length);
    for (let i = 0; i < direct.length; i += 1) {
      for (let t = 0; t < handle.horizon; t += 1) {
        for (let d = 0; d < handle.actionDim; d += 1) {
          expect(Math.abs(viaBindings[i][t][d] - direct[i][t][d])).toBeLessThanOrEqual(1e-12);
        }
      }
    }
  }, 60_000);
});

describe("round trips", () => {
  it("decode(encode(chunk)) stays within the codec error bound", () => {
    // the bound holds for chunks inside the model's normalization box,
    // so sample strictly within it
    const bound = roundtripBound(handle);
    const rand = mulberry32(7);
    const sample: number[][][] = [];
    for (let i = 0; i < 20; i += 1) {
      const chunk: number[][] = [];
      for (let t = 0; t < handle.horizon; t += 1) {
        const row: number[] = [];
        for (let d = 0; d < handle.actionDim; d += 1) {
          const mid = (handle.qLow[d] + handle.qHigh[d]) / 2;
          const half = (handle.qHigh[d] - handle.qLow[d]) / 2;
          row.push(mid + (2 * rand() - 1) * 0.9 * half);
        }
        chunk.push(row);
      }
      sample.push(chunk);
    }
    const decoded = decodeTokenBatch(handle, encodeChunkBatch(handle, sample));
    for (let i = 0; i < sample.length; i += 1) {
      for (let t = 0; t < handle.horizon; t += 1) {
        for (let d = 0; d < handle.actionDim; d += 1) {
          expect(Math.abs(decoded[i][t][d] - sample[i][t][d])).toBeLessThanOrEqual(bound);
        }
      }
    }
  }, 60_000);

  it("single-chunk calls agree with the batch path", () => {
    const tokens = encodeChunk(handle, chunks[0]);
    expect(tokens).toStrictEqual(encodeChunkBatch(handle, [chunks[0]])[0]);
    const back = decodeTokens(handle, tokens);
    expect(back).toStrictEqual(decodeTokenBatch(handle, [tokens])[0]);
  }, 60_000);
});

describe("misuse", () => {
  it("rejects wrong-shape chunks and keeps the handle usable", () => {
    expect(() => encodeChunk(handle, [[1, 2, 3]])).toThrow(BindingError);
    expect(() => encodeChunk(handle, chunks[0].slice(0, 3))).toThrow(BindingError);
    const row = chunks[0].map((r) => [...r]);
    row[1][2] = Number.NaN;
    expect(() => encodeChunk(handle, row)).toThrow(BindingError);
    expect(encodeChunk(handle, chunks[0]).length).toBeGreaterThan(0);
  }, 60_000);

  it("rejects malformed token sequences", () => {
    expect(() => decodeTokens(handle, [0.5] as unknown as number[])).toThrow(BindingError);
    expect(() => decodeTokens(handle, [10 ** 9])).toThrow(BindingError);
    expect(() => decodeTokens(handle, [0])).toThrow(BindingError); // wrong length
  }, 60_000);

  it("refuses operations on a closed handle", () => {
    const second = openModel(modelPath);
    closeModel(second);
    expect(() => encodeChunk(second, chunks[0])).toThrow(BindingError);
    expect(() => decodeTokens(second, [0])).toThrow(BindingError);
    expect(() => roundtripBound(second)).toThrow(BindingError);
  });
});
