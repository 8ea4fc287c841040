/**
 * End-to-end demo: train the toy model with the capture hook attached,
 * flush gradient traces, export per-task losses, and drop a
 * capture_log.json describing what was written.
 *
 * Each epoch flushes one trace file (sample ids restart per epoch, and the
 * flush boundary matches the dataset size, so every file stays
 * duplicate-free). Each class of the held-out set is treated as one
 * downstream task; its loss is exported after every epoch.
 *
 * Usage: node dist/demo.js [outDir]
 */

import { attach } from "./hook.js";
import { ToyTrainer, makeBlobs } from "./toytrain.js";

const outDir = process.argv[2] ?? "export_out";
const nClasses = 3;

const trainer = new ToyTrainer({ nIn: 4, nClasses, learningRate: 0.05, seed: 7 });
const trainSet = makeBlobs(40, 4, nClasses, 1.0, 11); // 120 samples
const taskSet = makeBlobs(20, 4, nClasses, 1.0, 23); // held-out evaluation set
const taskSlices = Array.from({ length: nClasses }, (_, c) =>
  taskSet.filter((s) => s.label === c),
);

const session = attach(
  {
    sliceFraction: 0.1,
    flushEvery: trainSet.length,
    outDir,
    // record each sample's class as its initial-category hint
    domainHint: (sampleId) => trainSet[sampleId].label,
  },
  trainer,
);

const epochs = 2;
for (let epoch = 0; epoch < epochs; epoch++) {
  trainer.epoch(trainSet, (index) => index);
  const step = (epoch + 1) * trainSet.length;
  taskSlices.forEach((slice, task) => {
    session.exportLoss(task, step, trainer.loss(slice));
  });
}
if (session.pendingRecords() > 0) {
  session.flush();
}
const logPath = session.writeCaptureLog();

const log = session.captureLog();
console.log(
  `captured dim ${log.dim}, ${log.traces.length} trace files, ` +
    `${log.loss_rows} loss rows -> ${logPath}`,
);
