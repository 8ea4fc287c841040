export { encodeTrace, lossRow, recordSize, HEADER_SIZE, MAGIC, VERSION } from "./format.js";
export type { TraceRecord } from "./format.js";
export { attach, CaptureSession } from "./hook.js";
export type { HookConfig, TrainingLoopHandle } from "./hook.js";
export { ToyTrainer, makeBlobs, mulberry32, gaussian } from "./toytrain.js";
export type { Sample, ToyTrainerConfig } from "./toytrain.js";
