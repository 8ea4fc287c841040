/**
 * Gradient-trace binary format and loss-history CSV.
 *
 * Trace layout (little-endian):
 *   magic "GTRC" | version u32 = 1 | dim u32 | count u32
 *   then per record: sample_id u32 | domain_hint i32 | dim * float32
 *
 * Loss CSV: header `task,step,loss`, one observation per row.
 */

export const MAGIC = "GTRC";
export const VERSION = 1;
export const HEADER_SIZE = 16;

export interface TraceRecord {
  sampleId: number;
  domainHint: number;
  vector: Float32Array;
}

export function recordSize(dim: number): number {
  return 8 + 4 * dim;
}

/** Serialize records into one trace buffer, validating as we go. */
export function encodeTrace(dim: number, records: TraceRecord[]): Buffer {
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new Error(`dim must be a positive integer, got ${dim}`);
  }
  const seen = new Set<number>();
  for (const rec of records) {
    if (rec.vector.length !== dim) {
      throw new Error(
        `sample ${rec.sampleId}: vector length ${rec.vector.length} != dim ${dim}`,
      );
    }
    for (const v of rec.vector) {
      if (!Number.isFinite(v)) {
        throw new Error(`sample ${rec.sampleId}: non-finite gradient entry`);
      }
    }
    if (seen.has(rec.sampleId)) {
      throw new Error(`duplicate sample id ${rec.sampleId}`);
    }
    seen.add(rec.sampleId);
  }

  const buf = Buffer.alloc(HEADER_SIZE + records.length * recordSize(dim));
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(dim, 8);
  buf.writeUInt32LE(records.length, 12);
  let offset = HEADER_SIZE;
  for (const rec of records) {
    buf.writeUInt32LE(rec.sampleId, offset);
    buf.writeInt32LE(rec.domainHint, offset + 4);
    offset += 8;
    for (const v of rec.vector) {
      buf.writeFloatLE(v, offset);
      offset += 4;
    }
  }
  return buf;
}

export const LOSS_HEADER = "task,step,loss";

export function lossRow(taskId: number, step: number, loss: number): string {
  if (!Number.isInteger(taskId) || taskId < 0) {
    throw new Error(`task id must be a non-negative integer, got ${taskId}`);
  }
  if (!Number.isInteger(step) || step < 0) {
    throw new Error(`step must be a non-negative integer, got ${step}`);
  }
  if (!Number.isFinite(loss) || loss < 0) {
    throw new Error(`loss must be finite and >= 0, got ${loss}`);
  }
  return `${taskId},${step},${loss}`;
}
