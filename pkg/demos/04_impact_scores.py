"""Domain impact: Fisher-weighted divergence versus plain alignment.

Using the planted corpus (aligned / offtask / noise domains and a task
drawn from the aligned generator), compute each domain's impact on the
task under both metrics. Lower divergence means the domain's update
mimics the task's update; the normalized column turns that into sampling
weight.
"""

import numpy as np

from domainmix import (
    DomainGradient,
    TaskGradient,
    build_impact_matrix,
    estimate_fim_diagonal,
    make_corpus,
    planted_corpus_spec,
)
from domainmix.toysim import backward, init_model, per_sample_gradients, sgd_step

corpus = make_corpus(planted_corpus_spec(), seed=5)
model = init_model(corpus.spec.n_in, 8, corpus.spec.n_classes, seed=99)

# train briefly so the gradients carry structure
rng = np.random.default_rng(0)
for _ in range(300):
    pick = rng.integers(0, len(corpus.y), size=32)
    model = sgd_step(model, backward(model, corpus.x[pick], corpus.y[pick]), 0.1)

sl = model.tail_slice()
task = corpus.tasks[0]

domain_grads = []
for i, idx in enumerate(corpus.domain_indices()):
    mean = backward(model, corpus.x[idx], corpus.y[idx])[sl]
    domain_grads.append(DomainGradient(domain=i, mean=mean, weight=float(len(idx))))

task_grad = TaskGradient(task=0, mean=backward(model, task.x, task.y)[sl],
                         batch_size=len(task.y))
fim = estimate_fim_diagonal(per_sample_gradients(model, task.x, task.y)[:, sl])

names = [d.name for d in corpus.spec.domains]
for metric in ("fim_kl", "dga_alignment"):
    matrix = build_impact_matrix(
        domain_grads, [task_grad],
        [fim] if metric == "fim_kl" else None,
        metric=metric,
    )
    print(f"\nmetric = {metric}")
    print(f"{'domain':>8} {'raw':>12} {'normalized':>12}")
    for i, name in enumerate(names):
        print(f"{name:>8} {matrix.raw[i, 0]:>12.6f} {matrix.normalized[i, 0]:>12.4f}")

print("\nthe aligned domain should take the largest normalized share,")
print("the label-noise domain the smallest")
