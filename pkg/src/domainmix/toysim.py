"""Desk-scale experiment harness.

A one-hidden-layer softmax classifier with hand-written backprop stands in
for the training model, a synthetic Gaussian-mixture corpus provides
domains with controllable task alignment, and strategy runners execute the
full sampling loop so reweighting strategies can be compared end to end.

The planted corpus puts three domains in play: one whose generator matches
the task ("aligned"), one drawn from unrelated class means ("offtask"),
and one that reuses the aligned features but randomizes labels ("noise").
Ground truth about which domain helps the task is therefore known by
construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import softmax

from . import cluster, impact, scheduler
from .gradtrace import GradientTrace, LossHistory, TraceRecord
from .sketch import make_projection

__all__ = [
    "ToyModel",
    "init_model",
    "forward_loss",
    "per_sample_gradients",
    "backward",
    "sgd_step",
    "accuracy",
    "DomainSpec",
    "TaskSpec",
    "CorpusSpec",
    "SyntheticCorpus",
    "make_corpus",
    "planted_corpus_spec",
    "RunConfig",
    "RunReport",
    "run_strategy",
    "compare_strategies",
    "ComparisonRow",
    "save_report",
    "load_report",
]

STRATEGIES = ("dids", "dga", "uniform", "random", "static")


# --------------------------------------------------------------------------
# toy model


@dataclass(frozen=True)
class ToyModel:
    """Flat-parameter MLP: n_in -> tanh(n_h) -> softmax(n_c)."""

    n_in: int
    n_h: int
    n_c: int
    params: np.ndarray
    slice_start: int

    def __post_init__(self):
        expected = self.n_in * self.n_h + self.n_h + self.n_h * self.n_c + self.n_c
        params = np.asarray(self.params, dtype=float)
        if params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {params.shape}")
        if not (0 <= self.slice_start < expected):
            raise ValueError("slice must cover at least one parameter")
        object.__setattr__(self, "params", params)

    @property
    def n_params(self) -> int:
        return self.params.size

    def unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        i = 0
        w1 = self.params[i:i + self.n_in * self.n_h].reshape(self.n_in, self.n_h)
        i += self.n_in * self.n_h
        b1 = self.params[i:i + self.n_h]
        i += self.n_h
        w2 = self.params[i:i + self.n_h * self.n_c].reshape(self.n_h, self.n_c)
        i += self.n_h * self.n_c
        b2 = self.params[i:]
        return w1, b1, w2, b2

    def tail_slice(self) -> slice:
        return slice(self.slice_start, self.n_params)


def init_model(n_in: int, n_h: int, n_c: int, seed: int,
               scale: float = 0.1, slice_fraction: float = 0.1) -> ToyModel:
    """Random small-weight model with the trailing-slice marker set."""
    if not (0.0 < slice_fraction <= 1.0):
        raise ValueError("slice_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    total = n_in * n_h + n_h + n_h * n_c + n_c
    params = rng.normal(0.0, scale, size=total)
    slice_len = max(1, int(np.ceil(slice_fraction * total)))
    return ToyModel(n_in=n_in, n_h=n_h, n_c=n_c, params=params,
                    slice_start=total - slice_len)


def _forward(model: ToyModel, x: np.ndarray):
    w1, b1, w2, b2 = model.unpack()
    hidden = np.tanh(x @ w1 + b1)
    probs = softmax(hidden @ w2 + b2, axis=1)
    return hidden, probs


def forward_loss(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of the batch."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    if x.shape[1] != model.n_in:
        raise ValueError(f"feature dim {x.shape[1]} does not match n_in={model.n_in}")
    _, probs = _forward(model, x)
    return float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))


def per_sample_gradients(model: ToyModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact per-sample loss gradients, one flat row per sample."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    if x.shape[1] != model.n_in:
        raise ValueError(f"feature dim {x.shape[1]} does not match n_in={model.n_in}")
    n = x.shape[0]
    w1, b1, w2, b2 = model.unpack()
    hidden = np.tanh(x @ w1 + b1)
    probs = softmax(hidden @ w2 + b2, axis=1)
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dw2 = np.einsum("ni,nj->nij", hidden, dlogits).reshape(n, -1)
    dhidden = dlogits @ w2.T
    dpre = dhidden * (1.0 - hidden * hidden)
    dw1 = np.einsum("ni,nj->nij", x, dpre).reshape(n, -1)
    return np.concatenate([dw1, dpre, dw2, dlogits], axis=1)


def backward(model: ToyModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of :func:`forward_loss` with respect to the flat parameters."""
    return per_sample_gradients(model, x, y).mean(axis=0)


def sgd_step(model: ToyModel, grad: np.ndarray, lr: float) -> ToyModel:
    if lr < 0:
        raise ValueError("lr must be >= 0")
    grad = np.asarray(grad, dtype=float)
    if grad.shape != model.params.shape:
        raise ValueError("gradient shape does not match parameters")
    return replace(model, params=model.params - lr * grad)


def accuracy(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    _, probs = _forward(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y)))


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class DomainSpec:
    """Generator recipe for one domain.

    ``means_of`` reuses another domain's class means (index into the spec's
    domain list); None draws fresh ones. ``label_noise`` is the fraction of
    labels replaced by uniform draws. ``sigma_scale`` multiplies the
    corpus-wide feature noise; tightening it concentrates a domain's
    samples near the class means. ``helps_tasks`` tags the task indices
    this domain genuinely helps.
    """

    name: str
    n_samples: int
    label_noise: float = 0.0
    means_of: int | None = None
    sigma_scale: float = 1.0
    helps_tasks: tuple[int, ...] = ()


@dataclass(frozen=True)
class TaskSpec:
    """Held-out evaluation set drawn from one domain's generator."""

    means_of: int
    n_samples: int = 200


@dataclass(frozen=True)
class CorpusSpec:
    n_in: int
    n_classes: int
    separation: float
    sigma: float
    domains: tuple[DomainSpec, ...]
    tasks: tuple[TaskSpec, ...]


@dataclass(frozen=True)
class TaskSet:
    x: np.ndarray
    y: np.ndarray
    helpful_domains: tuple[int, ...]


@dataclass(frozen=True)
class SyntheticCorpus:
    spec: CorpusSpec
    seed: int
    x: np.ndarray            # (n, n_in) training features
    y: np.ndarray            # (n,) labels
    true_domain: np.ndarray  # (n,) generator index per sample
    class_means: np.ndarray  # (k, n_classes, n_in) resolved generator means
    tasks: tuple[TaskSet, ...]

    @property
    def n_domains(self) -> int:
        return len(self.spec.domains)

    def domain_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.true_domain == i) for i in range(self.n_domains)]


def planted_corpus_spec(
    n_in: int = 20,
    n_classes: int = 4,
    separation: float = 2.0,
    sigma: float = 1.1,
    samples_per_domain: int = 500,
    task_samples: int = 200,
    noise_samples: int | None = None,
    include_noise: bool = True,
) -> CorpusSpec:
    """The alignment-planted corpus used throughout the harness tests."""
    domains = [
        DomainSpec("aligned", samples_per_domain, helps_tasks=(0,)),
        DomainSpec("offtask", samples_per_domain),
    ]
    if include_noise:
        # wrong labels concentrated near the aligned class means hurt the
        # most, which is exactly what a useless domain should do here
        domains.append(
            DomainSpec("noise", noise_samples or samples_per_domain,
                       label_noise=1.0, means_of=0, sigma_scale=0.6)
        )
    return CorpusSpec(
        n_in=n_in,
        n_classes=n_classes,
        separation=separation,
        sigma=sigma,
        domains=tuple(domains),
        tasks=(TaskSpec(means_of=0, n_samples=task_samples),),
    )


def make_corpus(spec: CorpusSpec, seed: int) -> SyntheticCorpus:
    """Instantiate a corpus; deterministic in (spec, seed).

    Task sets are fresh draws, never shared with training samples.
    """
    if len(spec.domains) < 2:
        raise ValueError("need at least 2 domains")
    if len(spec.tasks) < 1:
        raise ValueError("need at least 1 task")
    rng = np.random.default_rng(seed)
    k = len(spec.domains)
    means = np.empty((k, spec.n_classes, spec.n_in))
    for i, dom in enumerate(spec.domains):
        fresh = rng.normal(size=(spec.n_classes, spec.n_in))
        fresh = spec.separation * fresh / np.linalg.norm(fresh, axis=1, keepdims=True)
        if dom.means_of is None:
            means[i] = fresh
        else:
            if not (0 <= dom.means_of < i):
                raise ValueError(f"domain {i}: means_of must point at an earlier domain")
            means[i] = means[dom.means_of]

    def draw(m: np.ndarray, n: int, label_noise: float, sigma_scale: float = 1.0):
        labels = rng.integers(0, spec.n_classes, size=n)
        feats = m[labels] + sigma_scale * spec.sigma * rng.normal(size=(n, spec.n_in))
        if label_noise > 0:
            flip = rng.random(n) < label_noise
            labels = np.where(flip, rng.integers(0, spec.n_classes, size=n), labels)
        return feats, labels

    xs, ys, doms = [], [], []
    for i, dom in enumerate(spec.domains):
        feats, labels = draw(means[i], dom.n_samples, dom.label_noise, dom.sigma_scale)
        xs.append(feats)
        ys.append(labels)
        doms.append(np.full(dom.n_samples, i))

    tasks = []
    for j, task in enumerate(spec.tasks):
        feats, labels = draw(means[task.means_of], task.n_samples, 0.0)
        helpful = tuple(i for i, d in enumerate(spec.domains) if j in d.helps_tasks)
        tasks.append(TaskSet(x=feats, y=labels, helpful_domains=helpful))

    return SyntheticCorpus(
        spec=spec,
        seed=seed,
        x=np.concatenate(xs),
        y=np.concatenate(ys),
        true_domain=np.concatenate(doms),
        class_means=means,
        tasks=tuple(tasks),
    )


# --------------------------------------------------------------------------
# strategy runner


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one simulated training run.

    The EMA coefficient and temperature here are deliberately heavier than
    the engine-wide scheduler defaults: toy losses live on a small scale
    and the 25-update horizon needs well-damped probability dynamics.
    """

    steps: int = 5000
    tau: int = 200
    batch_size: int = 32
    lr: float = 0.1
    beta: float = 0.8
    temperature: float = 0.06
    floor: float | None = None
    grad_decay: float = 0.9
    probe_size: int | None = 128   # None: probe with the full domain
    fim_batch: int = 32
    impact_metric: str = "fim_kl"
    impact_direction: str = "aligned"
    fit_min_points: int = 3
    hidden: int = 8
    init_scale: float = 0.1
    slice_fraction: float = 0.1
    model_seed_offset: int = 1000
    static_probs: tuple[float, ...] | None = None
    repartition: bool = False
    k_domains: int | None = None
    keep_ratio: float = 0.1
    proj_dim: int | None = None
    proj_seed: int = 0
    kmeans_seed: int = 0
    proxy_hidden: int | None = None


@dataclass(frozen=True)
class RunReport:
    strategy: str
    seed: int
    config: dict
    train_losses: list[float]
    update_steps: list[int]
    task_losses: list[list[float]]       # one row per evaluation point
    trajectory: np.ndarray               # (evaluations, k) probability rows
    utility_history: np.ndarray          # (scheduler updates, k)
    final_task_losses: list[float]
    final_task_accuracy: list[float]

    @property
    def k(self) -> int:
        return self.trajectory.shape[1]

    @property
    def mean_final_loss(self) -> float:
        return float(np.mean(self.final_task_losses))


def _config_echo(config: RunConfig, corpus: SyntheticCorpus, strategy: str, seed: int) -> dict:
    echo = asdict(config)
    echo.update(
        strategy=strategy,
        seed=seed,
        corpus_seed=corpus.seed,
        corpus_domains=[d.name for d in corpus.spec.domains],
        corpus_sizes=[d.n_samples for d in corpus.spec.domains],
        n_in=corpus.spec.n_in,
        n_classes=corpus.spec.n_classes,
    )
    return echo


def _repartition_domains(corpus: SyntheticCorpus, model: ToyModel,
                         config: RunConfig, seed: int) -> list[np.ndarray]:
    """Regroup training samples by clustering their sketched gradient slices."""
    proxy = model
    if config.proxy_hidden is not None and config.proxy_hidden != model.n_h:
        proxy = init_model(model.n_in, config.proxy_hidden, model.n_c,
                           seed + config.model_seed_offset + 1,
                           config.init_scale, config.slice_fraction)
    sl = proxy.tail_slice()
    grads = per_sample_gradients(proxy, corpus.x, corpus.y)[:, sl]
    dim = grads.shape[1]
    trace = GradientTrace(
        dim=dim,
        records=tuple(
            TraceRecord(i, int(corpus.true_domain[i]), grads[i].astype(np.float32))
            for i in range(len(grads))
        ),
        source_tag="toysim-proxy",
    )
    s = min(config.proj_dim or dim, dim)
    proj = make_projection(dim, s, config.proj_seed)
    k = config.k_domains or corpus.n_domains
    part = cluster.repartition(trace, config.keep_ratio, proj, k=k, seed=config.kmeans_seed)
    labels = part.labels_for(range(len(grads)))
    return [np.flatnonzero(labels == i) for i in range(k)]


def run_strategy(corpus: SyntheticCorpus, strategy: str, config: RunConfig,
                 seed: int) -> RunReport:
    """Train under one sampling strategy and record the full run."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    rng = np.random.default_rng(seed)
    model = init_model(corpus.spec.n_in, config.hidden, corpus.spec.n_classes,
                       seed + config.model_seed_offset, config.init_scale,
                       config.slice_fraction)
    if config.repartition:
        groups = _repartition_domains(corpus, model, config, seed)
    else:
        groups = corpus.domain_indices()
    k = len(groups)
    for i, g in enumerate(groups):
        if len(g) == 0:
            raise ValueError(f"domain {i} has no samples")

    if strategy == "uniform":
        base = np.full(k, 1.0 / k)
    elif strategy == "random":
        sizes = np.array([len(g) for g in groups], dtype=float)
        base = sizes / sizes.sum()
    elif strategy == "static":
        if config.static_probs is None or len(config.static_probs) != k:
            raise ValueError("static strategy needs static_probs of length k")
        base = np.asarray(config.static_probs, dtype=float)
        base = base / base.sum()
    else:
        base = np.full(k, 1.0 / k)

    state = scheduler.uniform_state(k, beta=config.beta, tau=config.tau,
                                    floor=config.floor)
    if strategy in ("random", "static"):
        state = replace(state, probs=base, prev_probs=base.copy())

    sl = model.tail_slice()
    dgrads = [
        impact.DomainGradient(domain=i, mean=np.zeros(sl.stop - sl.start),
                              weight=0.0, decay=config.grad_decay)
        for i in range(k)
    ]

    histories: list[list[tuple[int, float]]] = [[] for _ in corpus.tasks]

    def evaluate(step: int) -> list[float]:
        row = []
        for j, task in enumerate(corpus.tasks):
            loss = forward_loss(model, task.x, task.y)
            histories[j].append((step, loss))
            row.append(loss)
        return row

    train_losses: list[float] = []
    update_steps = [0]
    task_losses = [evaluate(0)]
    trajectory = [state.probs.copy()]
    utility_rows: list[np.ndarray] = []

    for t in range(1, config.steps + 1):
        counts = rng.multinomial(config.batch_size, state.probs)
        xs, ys = [], []
        for i, c in enumerate(counts):
            if c == 0:
                continue
            pick = groups[i][rng.integers(0, len(groups[i]), size=c)]
            xs.append(corpus.x[pick])
            ys.append(corpus.y[pick])
        bx = np.concatenate(xs)
        by = np.concatenate(ys)
        grads = per_sample_gradients(model, bx, by)
        train_losses.append(forward_loss(model, bx, by))
        model = sgd_step(model, grads.mean(axis=0), config.lr)

        if not scheduler.should_update(state, t):
            continue
        update_steps.append(t)
        row = evaluate(t)
        task_losses.append(row)

        if strategy in ("dids", "dga"):
            tgrads = []
            for j, task in enumerate(corpus.tasks):
                tg = backward(model, task.x, task.y)[sl]
                tgrads.append(impact.TaskGradient(task=j, mean=tg, batch_size=len(task.y)))
            for i in range(k):
                g = groups[i]
                if config.probe_size is not None and config.probe_size < len(g):
                    g = g[rng.integers(0, len(g), size=config.probe_size)]
                batch_mean = backward(model, corpus.x[g], corpus.y[g])[sl]
                dgrads[i] = impact.update_domain_gradient(dgrads[i], batch_mean, len(g))

            if strategy == "dids":
                fims = []
                for j, task in enumerate(corpus.tasks):
                    n = len(task.y)
                    if config.fim_batch is not None and config.fim_batch < n:
                        pick = rng.integers(0, n, size=config.fim_batch)
                    else:
                        pick = np.arange(n)
                    psg = per_sample_gradients(model, task.x[pick], task.y[pick])[:, sl]
                    fims.append(impact.estimate_fim_diagonal(psg))
                matrix = impact.build_impact_matrix(
                    dgrads, tgrads, fims, metric="fim_kl",
                    direction=config.impact_direction,
                )
            else:
                matrix = impact.build_impact_matrix(
                    dgrads, tgrads, None, metric="dga_alignment"
                )

            dls, lps = [], []
            for j in range(len(corpus.tasks)):
                hist = LossHistory(task_id=j, points=tuple(histories[j]))
                dls.append(scheduler.loss_improvement(hist))
                if len(hist.points) >= config.fit_min_points:
                    fit = scheduler.fit_decay(hist)
                    lps.append(scheduler.potential(fit, t, state.tau, row[j]))
                else:
                    lps.append(0.0)

            u = scheduler.utilities(matrix, dls, lps, state.probs)
            state = scheduler.update_probs(state, u, config.temperature)
            utility_rows.append(u.values.copy())
        trajectory.append(state.probs.copy())

    final_losses = task_losses[-1]
    final_acc = [accuracy(model, task.x, task.y) for task in corpus.tasks]
    return RunReport(
        strategy=strategy,
        seed=seed,
        config=_config_echo(config, corpus, strategy, seed),
        train_losses=train_losses,
        update_steps=update_steps,
        task_losses=task_losses,
        trajectory=np.array(trajectory),
        utility_history=(np.array(utility_rows) if utility_rows
                         else np.zeros((0, k))),
        final_task_losses=list(final_losses),
        final_task_accuracy=final_acc,
    )


# --------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ComparisonRow:
    strategy: str
    n_seeds: int
    mean_final_loss: float
    std_final_loss: float
    per_seed: dict[int, float]
    paired_wins: dict[str, int]  # seeds where this strategy beat the other


_COMPARE_KEYS = ("steps", "tau", "batch_size", "lr", "corpus_seed",
                 "corpus_sizes", "n_in", "n_classes")


def compare_strategies(reports: list[RunReport]) -> list[ComparisonRow]:
    """Aggregate per-strategy final losses over seeds, with paired win counts."""
    if not reports:
        raise ValueError("no reports to compare")
    ref = {key: reports[0].config.get(key) for key in _COMPARE_KEYS}
    for rep in reports[1:]:
        mine = {key: rep.config.get(key) for key in _COMPARE_KEYS}
        if mine != ref:
            raise ValueError(
                f"mismatched run configs: {mine} vs {ref} "
                f"({rep.strategy} seed {rep.seed})"
            )
    by_strategy: dict[str, dict[int, float]] = {}
    for rep in reports:
        by_strategy.setdefault(rep.strategy, {})[rep.seed] = rep.mean_final_loss
    rows = []
    for strategy, per_seed in by_strategy.items():
        vals = np.array(list(per_seed.values()))
        wins = {}
        for other, other_seeds in by_strategy.items():
            if other == strategy:
                continue
            shared = sorted(set(per_seed) & set(other_seeds))
            wins[other] = sum(per_seed[s] < other_seeds[s] for s in shared)
        rows.append(ComparisonRow(
            strategy=strategy,
            n_seeds=len(per_seed),
            mean_final_loss=float(vals.mean()),
            std_final_loss=float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            per_seed=dict(sorted(per_seed.items())),
            paired_wins=wins,
        ))
    rows.sort(key=lambda r: r.mean_final_loss)
    return rows


# --------------------------------------------------------------------------
# report persistence (JSON metrics + CSV trajectory)


def save_report(report: RunReport, json_path, trajectory_csv_path=None) -> None:
    payload = {
        "strategy": report.strategy,
        "seed": report.seed,
        "config": report.config,
        "update_steps": report.update_steps,
        "task_losses": report.task_losses,
        "final_task_losses": report.final_task_losses,
        "final_task_accuracy": report.final_task_accuracy,
        "train_losses": report.train_losses,
        "trajectory": report.trajectory.tolist(),
        "utility_history": report.utility_history.tolist(),
    }
    Path(json_path).write_text(json.dumps(payload) + "\n", encoding="utf-8")
    if trajectory_csv_path is not None:
        lines = ["update_index,step,domain,prob"]
        for u, (step, row) in enumerate(zip(report.update_steps, report.trajectory)):
            for dom, p in enumerate(row):
                lines.append(f"{u},{step},{dom},{float(p)!r}")
        Path(trajectory_csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_report(json_path) -> RunReport:
    payload = json.loads(Path(json_path).read_text(encoding="utf-8"))
    return RunReport(
        strategy=payload["strategy"],
        seed=payload["seed"],
        config=payload["config"],
        train_losses=payload["train_losses"],
        update_steps=payload["update_steps"],
        task_losses=payload["task_losses"],
        trajectory=np.array(payload["trajectory"]),
        utility_history=np.array(payload["utility_history"]).reshape(
            len(payload["utility_history"]), -1
        ) if payload["utility_history"] else np.zeros((0, len(payload["trajectory"][0]))),
        final_task_losses=payload["final_task_losses"],
        final_task_accuracy=payload["final_task_accuracy"],
    )
