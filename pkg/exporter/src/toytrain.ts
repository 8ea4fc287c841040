/**
 * Minimal external training loop: softmax regression with per-sample SGD.
 *
 * Parameters are one flat Float32Array ordered [W row-major, b], so the
 * trailing slice covers the bias plus the tail of the weight matrix.
 * Gradients are computed per sample (micro-batch of one), which is what
 * the capture hook expects.
 */

export interface Sample {
  features: Float32Array;
  label: number;
}

export interface ToyTrainerConfig {
  nIn: number;
  nClasses: number;
  learningRate: number;
  seed: number;
}

/** Small deterministic PRNG (mulberry32) so runs reproduce exactly. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function gaussian(rand: () => number): number {
  // Box-Muller; rejects the zero corner to keep log() finite
  let u = 0;
  while (u === 0) u = rand();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * rand());
}

export function makeBlobs(
  nPerClass: number,
  nIn: number,
  nClasses: number,
  spread: number,
  seed: number,
): Sample[] {
  const rand = mulberry32(seed);
  const means: Float32Array[] = [];
  for (let c = 0; c < nClasses; c++) {
    const m = new Float32Array(nIn);
    for (let j = 0; j < nIn; j++) m[j] = 2.0 * gaussian(rand);
    means.push(m);
  }
  const samples: Sample[] = [];
  for (let c = 0; c < nClasses; c++) {
    for (let i = 0; i < nPerClass; i++) {
      const x = new Float32Array(nIn);
      for (let j = 0; j < nIn; j++) x[j] = means[c][j] + spread * gaussian(rand);
      samples.push({ features: x, label: c });
    }
  }
  return samples;
}

export class ToyTrainer {
  readonly nIn: number;
  readonly nClasses: number;
  readonly params: Float32Array; // [W row-major (nIn x nClasses), b]
  private readonly lr: number;
  private gradCallbacks: Array<(sampleId: number, grad: Float32Array) => void> = [];

  constructor(config: ToyTrainerConfig) {
    this.nIn = config.nIn;
    this.nClasses = config.nClasses;
    this.lr = config.learningRate;
    this.params = new Float32Array(config.nIn * config.nClasses + config.nClasses);
    const rand = mulberry32(config.seed);
    for (let i = 0; i < this.params.length; i++) {
      this.params[i] = 0.1 * gaussian(rand);
    }
  }

  parameterCount(): number {
    return this.params.length;
  }

  onPerSampleGradient(cb: (sampleId: number, grad: Float32Array) => void): void {
    this.gradCallbacks.push(cb);
  }

  private probabilities(x: Float32Array): number[] {
    const logits: number[] = [];
    for (let c = 0; c < this.nClasses; c++) {
      let z = this.params[this.nIn * this.nClasses + c];
      for (let j = 0; j < this.nIn; j++) {
        z += x[j] * this.params[j * this.nClasses + c];
      }
      logits.push(z);
    }
    const maxLogit = Math.max(...logits);
    const exps = logits.map((z) => Math.exp(z - maxLogit));
    const total = exps.reduce((a, b) => a + b, 0);
    return exps.map((e) => e / total);
  }

  loss(samples: Sample[]): number {
    let total = 0;
    for (const s of samples) {
      total += -Math.log(this.probabilities(s.features)[s.label] + 1e-12);
    }
    return total / samples.length;
  }

  /** One SGD pass over the samples, firing the gradient callbacks per sample. */
  epoch(samples: Sample[], sampleIdOf: (index: number) => number): void {
    samples.forEach((sample, index) => {
      const probs = this.probabilities(sample.features);
      const grad = new Float32Array(this.params.length);
      for (let c = 0; c < this.nClasses; c++) {
        const d = probs[c] - (c === sample.label ? 1 : 0);
        for (let j = 0; j < this.nIn; j++) {
          grad[j * this.nClasses + c] = sample.features[j] * d;
        }
        grad[this.nIn * this.nClasses + c] = d;
      }
      for (const cb of this.gradCallbacks) cb(sampleIdOf(index), grad);
      for (let i = 0; i < this.params.length; i++) {
        this.params[i] -= this.lr * grad[i];
      }
    });
  }
}
