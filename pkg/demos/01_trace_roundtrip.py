"""Gradient-trace files: write one, look at the bytes, read it back.

The trace format is the ingestion substrate for the whole engine: little
endian, a 16-byte header (magic, version, dim, record count), then fixed
size records of sample id, domain hint, and float32 gradient entries.
"""

import io

import numpy as np

from domainmix import GradientTrace, TraceRecord, read_trace, write_trace

rng = np.random.default_rng(7)

# Build a tiny trace: 5 samples, 8-dimensional gradients, two source hints.
records = tuple(
    TraceRecord(
        sample_id=i,
        domain_hint=i % 2,
        vector=rng.normal(size=8).astype(np.float32),
    )
    for i in range(5)
)
trace = GradientTrace(dim=8, records=records, source_tag="demo-run")

buf = io.BytesIO()
n_bytes = write_trace(trace, buf)
raw = buf.getvalue()
print(f"wrote {n_bytes} bytes: 16 header + 5 records x (8 + 4*8) bytes")

# The header is human-readable enough to eyeball in hex.
print("header bytes:", raw[:16].hex(" "))
print("  magic      :", raw[:4])
print("  version    :", int.from_bytes(raw[4:8], "little"))
print("  dim        :", int.from_bytes(raw[8:12], "little"))
print("  records    :", int.from_bytes(raw[12:16], "little"))

# Round trip: every field including the float32 payload is bit-identical.
back = read_trace(raw, source_tag="demo-run")
assert back.matrix().tobytes() == trace.matrix().tobytes()
print("round trip: bit-identical", back.matrix().shape)

# Malformed input is rejected with a specific error class, never truncated.
try:
    read_trace(raw[:30])
except Exception as exc:
    print(f"truncated read -> {type(exc).__name__}: {exc}")
