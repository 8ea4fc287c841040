/**
 * Capture hook for an external training loop.
 *
 * The hook registers a per-sample gradient callback on the loop, keeps the
 * trailing `sliceFraction` of each flat gradient, and writes trace files
 * whenever `flushEvery` records have accumulated (plus a final manual
 * flush). Loss observations are appended to a loss-history CSV alongside.
 *
 * One session per loop; the session must be driven from the loop's own
 * thread of control.
 */

import { appendFileSync, existsSync, mkdirSync, statSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { LOSS_HEADER, TraceRecord, encodeTrace, lossRow } from "./format.js";

export interface HookConfig {
  /** Trailing fraction of the flat parameter vector to capture, (0, 1]. */
  sliceFraction?: number;
  /** Records per trace file; a full buffer flushes automatically. */
  flushEvery?: number;
  /** Directory receiving trace files and the loss CSV. */
  outDir: string;
  /** Optional initial-category label per sample id; -1 when absent. */
  domainHint?: (sampleId: number) => number;
}

export interface TrainingLoopHandle {
  /** Total number of ordered scalar parameters. */
  parameterCount(): number;
  /** Register a callback fired with (sampleId, flat gradient) per sample. */
  onPerSampleGradient(cb: (sampleId: number, grad: Float32Array) => void): void;
}

interface FlushedTrace {
  file: string;
  records: number;
}

const attached = new WeakSet<TrainingLoopHandle>();

export class CaptureSession {
  readonly dim: number;
  readonly outDir: string;
  private readonly flushEvery: number;
  private readonly sliceStart: number;
  private readonly domainHint: (sampleId: number) => number;
  private buffer: TraceRecord[] = [];
  private bufferIds = new Set<number>();
  private flushed: FlushedTrace[] = [];
  private lossRows = 0;
  private fileIndex = 0;

  constructor(config: HookConfig, totalParams: number) {
    const fraction = config.sliceFraction ?? 0.1;
    if (!(fraction > 0 && fraction <= 1)) {
      throw new Error(`sliceFraction must be in (0, 1], got ${fraction}`);
    }
    const flushEvery = config.flushEvery ?? 512;
    if (!Number.isInteger(flushEvery) || flushEvery < 1) {
      throw new Error(`flushEvery must be a positive integer, got ${flushEvery}`);
    }
    // captured dim follows the ceil rule: a 10-parameter model at 0.10
    // captures exactly 1 trailing parameter
    this.dim = Math.max(1, Math.ceil(fraction * totalParams));
    this.sliceStart = totalParams - this.dim;
    this.flushEvery = flushEvery;
    this.outDir = config.outDir;
    this.domainHint = config.domainHint ?? (() => -1);
    mkdirSync(this.outDir, { recursive: true });
  }

  capture(sampleId: number, grad: Float32Array): void {
    if (this.bufferIds.has(sampleId)) {
      throw new Error(`sample id ${sampleId} captured twice before a flush`);
    }
    this.buffer.push({
      sampleId,
      domainHint: this.domainHint(sampleId),
      vector: grad.slice(this.sliceStart),
    });
    this.bufferIds.add(sampleId);
    if (this.buffer.length >= this.flushEvery) {
      this.flush();
    }
  }

  /** Write buffered records as one trace file; errors when nothing is buffered. */
  flush(): string {
    if (this.buffer.length === 0) {
      throw new Error("nothing captured since the last flush");
    }
    const name = `trace_${String(this.fileIndex).padStart(4, "0")}.gtrc`;
    const path = join(this.outDir, name);
    writeFileSync(path, encodeTrace(this.dim, this.buffer));
    this.flushed.push({ file: name, records: this.buffer.length });
    this.fileIndex += 1;
    this.buffer = [];
    this.bufferIds = new Set();
    return path;
  }

  exportLoss(taskId: number, step: number, loss: number): void {
    const path = join(this.outDir, "losses.csv");
    const needHeader = !existsSync(path) || statSync(path).size === 0;
    const row = lossRow(taskId, step, loss);
    appendFileSync(path, (needHeader ? LOSS_HEADER + "\n" : "") + row + "\n");
    this.lossRows += 1;
  }

  pendingRecords(): number {
    return this.buffer.length;
  }

  captureLog(): { dim: number; traces: FlushedTrace[]; loss_rows: number } {
    return { dim: this.dim, traces: [...this.flushed], loss_rows: this.lossRows };
  }

  writeCaptureLog(): string {
    const path = join(this.outDir, "capture_log.json");
    writeFileSync(path, JSON.stringify(this.captureLog(), null, 2) + "\n");
    return path;
  }
}

/** Attach a capture session to a training loop. One session per loop. */
export function attach(config: HookConfig, loop: TrainingLoopHandle): CaptureSession {
  if (typeof loop?.parameterCount !== "function" ||
      typeof loop?.onPerSampleGradient !== "function") {
    throw new Error("training loop does not expose ordered parameter access");
  }
  if (attached.has(loop)) {
    throw new Error("a capture session is already attached to this loop");
  }
  const session = new CaptureSession(config, loop.parameterCount());
  loop.onPerSampleGradient((sampleId, grad) => session.capture(sampleId, grad));
  attached.add(loop);
  return session;
}
