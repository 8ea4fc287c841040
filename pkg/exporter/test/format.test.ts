import { describe, expect, it } from "vitest";

import { HEADER_SIZE, encodeTrace, lossRow, recordSize } from "../src/format.js";

describe("encodeTrace", () => {
  it("writes a 16-byte header for an empty trace", () => {
    const buf = encodeTrace(4, []);
    expect(buf.length).toBe(16);
    expect(buf.subarray(0, 4).toString("ascii")).toBe("GTRC");
    expect(buf.readUInt32LE(4)).toBe(1); // version
    expect(buf.readUInt32LE(8)).toBe(4); // dim
    expect(buf.readUInt32LE(12)).toBe(0); // count
  });

  it("lays out a single dim-2 record in 32 bytes", () => {
    const buf = encodeTrace(2, [
      { sampleId: 0, domainHint: -1, vector: new Float32Array([1.0, -2.0]) },
    ]);
    expect(buf.length).toBe(HEADER_SIZE + recordSize(2));
    expect(buf.length).toBe(32);
    expect(buf.readUInt32LE(16)).toBe(0);
    expect(buf.readInt32LE(20)).toBe(-1);
    expect(buf.readFloatLE(24)).toBe(1.0);
    expect(buf.readFloatLE(28)).toBe(-2.0);
  });

  it("round-trips float32 values bit-exactly", () => {
    const values = new Float32Array([0.1, -1234.5678, 3.4e38, 1e-38]);
    const buf = encodeTrace(4, [{ sampleId: 9, domainHint: 2, vector: values }]);
    const back = new Float32Array(4);
    for (let i = 0; i < 4; i++) back[i] = buf.readFloatLE(16 + 8 + 4 * i);
    expect(Array.from(back)).toEqual(Array.from(values));
  });

  it("rejects duplicate sample ids", () => {
    const rec = { sampleId: 3, domainHint: -1, vector: new Float32Array([0]) };
    expect(() => encodeTrace(1, [rec, { ...rec }])).toThrow(/duplicate/);
  });

  it("rejects non-finite entries naming the sample", () => {
    expect(() =>
      encodeTrace(1, [{ sampleId: 7, domainHint: -1, vector: new Float32Array([NaN]) }]),
    ).toThrow(/sample 7/);
  });

  it("rejects vectors of the wrong length", () => {
    expect(() =>
      encodeTrace(3, [{ sampleId: 0, domainHint: -1, vector: new Float32Array([1, 2]) }]),
    ).toThrow(/length/);
  });
});

describe("lossRow", () => {
  it("formats a conformant row", () => {
    expect(lossRow(0, 100, 2.5)).toBe("0,100,2.5");
  });

  it("rejects non-finite and negative losses", () => {
    expect(() => lossRow(0, 1, Number.NaN)).toThrow();
    expect(() => lossRow(0, 1, -0.5)).toThrow();
  });

  it("rejects fractional steps", () => {
    expect(() => lossRow(0, 1.5, 1.0)).toThrow();
  });
});
