"""Desk-scale clustering pipeline: data views, warm-up, transport pseudo-labels,
head training by plain gradient descent, and the pseudo-labeler comparison bench.

The encoder is the identity (embeddings arrive precomputed or synthetic); the
trainable state is three small heads: a linear projection g_z, a linear
clustering head g_p with row-softmax output, and the attention network g_h.
Warm-up epochs label batches with k-means and train g_z and g_h only; later
epochs label batches by solving the transport problem on the batch predictions
with the combined similarity matrix, and additionally train g_p. Gradient
routing is structural: the attention loss updates only g_h, the cluster loss
only g_p, the instance loss only g_z.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import NumericError, as_matrix, softmax_rows
from .evaluation import accuracy, nmi
from .labeling import PseudoLabels, labels_from_plan, labels_from_prediction, same_cluster_sets
from .losses import (
    Temperatures,
    attention_head_gradients,
    attention_loss,
    cluster_head_gradient,
    cluster_loss,
    combined_loss,
    fd_gradient,
    instance_head_gradient,
    instance_loss,
)
from .similarity import AttentionParams, attention_forward, attention_similarity, cosine_matrix
from .solver import CaotParams, OtProblem, TransportPlan, caot_solve

__all__ = [
    "Dataset",
    "Heads",
    "RunConfig",
    "EpochRecord",
    "RunReport",
    "BenchResult",
    "kmeans",
    "synth_dataset",
    "init_heads",
    "forward_heads",
    "run_pipeline",
    "pseudo_label_bench",
]

_KMEANS_MAX_ITERS = 300
_FD_STEP = 1e-6


@dataclass
class Dataset:
    """Anchor embeddings plus two augmented views, optional labels, cluster count."""

    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    y_true: np.ndarray | None
    k: int

    def __post_init__(self) -> None:
        self.v0 = as_matrix(self.v0, "v0")
        self.v1 = as_matrix(self.v1, "v1")
        self.v2 = as_matrix(self.v2, "v2")
        if self.v1.shape != self.v0.shape or self.v2.shape != self.v0.shape:
            raise ValueError("all views must share the anchor's shape")
        if self.y_true is not None:
            self.y_true = np.asarray(self.y_true, dtype=np.int64)
            if self.y_true.shape != (self.v0.shape[0],):
                raise ValueError("y_true length must match the sample count")
        if self.k < 2:
            raise ValueError("k must be >= 2")

    @property
    def n(self) -> int:
        return self.v0.shape[0]

    @property
    def dim(self) -> int:
        return self.v0.shape[1]


@dataclass
class Heads:
    """Trainable state: projection g_z (D1 x D2), clustering head g_p (D1 x K),
    attention parameters g_h."""

    g_z: np.ndarray
    g_p: np.ndarray
    g_h: AttentionParams

    def copy(self) -> "Heads":
        return Heads(
            g_z=self.g_z.copy(),
            g_p=self.g_p.copy(),
            g_h=AttentionParams(
                w_k1=self.g_h.w_k1.copy(),
                w_k2=self.g_h.w_k2.copy(),
                w_t=self.g_h.w_t.copy(),
            ),
        )


@dataclass(frozen=True)
class RunConfig:
    """Training schedule and hyperparameters for one pipeline run."""

    e_total: int = 200
    e_warm: int = 60
    batch: int = 200
    lam: float = 10.0
    temps: Temperatures = field(default_factory=Temperatures)
    caot: CaotParams = field(default_factory=CaotParams)
    lr: float = 0.05
    seed: int = 0
    grad_mode: str = "finite-difference"
    d2: int = 8

    def __post_init__(self) -> None:
        if self.e_total < 1 or self.e_warm < 0:
            raise ValueError("epoch counts must be nonnegative with e_total >= 1")
        if self.e_warm > self.e_total:
            raise ValueError("e_warm must not exceed e_total")
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.grad_mode not in ("finite-difference", "analytic"):
            raise ValueError("grad_mode must be 'finite-difference' or 'analytic'")
        if self.d2 < 1:
            raise ValueError("d2 must be >= 1")


@dataclass
class EpochRecord:
    """Per-epoch averages and the pseudo-label source used for that epoch."""

    epoch: int
    warmup: bool
    label_source: str
    loss_attention: float
    loss_instance: float
    loss_cluster: float | None
    loss_total: float
    pseudo_acc: float | None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "warmup": self.warmup,
            "label_source": self.label_source,
            "loss_attention": self.loss_attention,
            "loss_instance": self.loss_instance,
            "loss_cluster": self.loss_cluster,
            "loss_total": self.loss_total,
            "pseudo_acc": self.pseudo_acc,
        }


@dataclass
class RunReport:
    """Full record of one pipeline run."""

    records: list
    kmeans_acc: float | None
    final_acc: float | None
    final_nmi: float | None
    final_labels: np.ndarray
    heads: Heads
    objective_trace: list
    coupling_snapshot: np.ndarray | None

    def to_dict(self) -> dict:
        return {
            "epochs": [r.to_dict() for r in self.records],
            "kmeans_acc": self.kmeans_acc,
            "final_acc": self.final_acc,
            "final_nmi": self.final_nmi,
            "objective_trace": list(self.objective_trace),
        }


def kmeans(v, k: int, seed: int) -> PseudoLabels:
    """Deterministic k-means with seeded ++-style initialization.

    Lloyd iterations run until the assignment reaches a fixpoint or 300
    rounds; a cluster that empties is re-seeded to the point farthest from
    its assigned centroid.
    """
    v = as_matrix(v, "v")
    n = v.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, v.shape[1]))
    centers[0] = v[int(rng.integers(n))]
    d2 = ((v - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            pick = int(rng.choice(n, p=probs))
        else:
            pick = int(rng.integers(n))
        centers[j] = v[pick]
        d2 = np.minimum(d2, ((v - centers[j]) ** 2).sum(axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    v_sq = (v * v).sum(axis=1)
    for _ in range(_KMEANS_MAX_ITERS):
        dists = v_sq[:, None] - 2.0 * (v @ centers.T) + (centers * centers).sum(axis=1)[None, :]
        new_assign = np.argmin(dists, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        closest = dists[np.arange(n), assign]
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = v[members].mean(axis=0)
            else:
                far = int(np.argmax(closest))
                centers[j] = v[far]
                assign[far] = j
                closest[far] = 0.0
    return PseudoLabels(labels=assign, k=k)


def synth_dataset(
    k: int, sizes, dim: int, separation: float, noise: float, seed: int
) -> Dataset:
    """Gaussian-mixture stand-in for an embedded corpus.

    Cluster centers sit at separation times k orthonormal random directions
    (pairwise distance separation * sqrt(2)); points get unit within-cluster
    scatter. The two views are the anchors plus seeded Gaussian perturbations
    of scale noise. True labels are recorded.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != k:
        raise ValueError(f"need {k} cluster sizes, got {len(sizes)}")
    if any(s < 1 for s in sizes):
        raise ValueError("cluster sizes must be positive")
    if separation <= 0:
        raise ValueError("separation must be > 0")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if dim < k:
        raise ValueError("dim must be >= k for orthogonal cluster centers")
    rng = np.random.default_rng(seed)
    basis, rfac = np.linalg.qr(rng.normal(size=(dim, dim)))
    basis *= np.sign(np.diag(rfac))[None, :]
    centers = separation * basis[:, :k].T

    chunks = []
    labels = []
    for c, size in enumerate(sizes):
        chunks.append(centers[c] + rng.normal(size=(size, dim)))
        labels.append(np.full(size, c, dtype=np.int64))
    v0 = np.vstack(chunks)
    y = np.concatenate(labels)
    v1 = v0 + noise * rng.normal(size=v0.shape)
    v2 = v0 + noise * rng.normal(size=v0.shape)
    return Dataset(v0=v0, v1=v1, v2=v2, y_true=y, k=k)


def init_heads(d1: int, k: int, d2: int, rng: np.random.Generator) -> Heads:
    return Heads(
        g_z=rng.normal(0.0, 1.0 / np.sqrt(d1), size=(d1, d2)),
        g_p=rng.normal(0.0, 1.0 / np.sqrt(d1), size=(d1, k)),
        g_h=AttentionParams.random(d2, rng),
    )


def forward_heads(v0, v1, v2, heads: Heads):
    """All head outputs for one batch: projections, probabilities, attention.

    Returns (z1, z2, p0, p1, p2, att1, att2).
    """
    v0 = as_matrix(v0, "v0")
    v1 = as_matrix(v1, "v1")
    v2 = as_matrix(v2, "v2")
    z1 = v1 @ heads.g_z
    z2 = v2 @ heads.g_z
    p0 = softmax_rows(v0 @ heads.g_p)
    p1 = softmax_rows(v1 @ heads.g_p)
    p2 = softmax_rows(v2 @ heads.g_p)
    att1 = attention_forward(z1, heads.g_h)
    att2 = attention_forward(z2, heads.g_h)
    return z1, z2, p0, p1, p2, att1, att2


def _attention_fd_grads(z1, z2, g_h: AttentionParams, r, temps) -> tuple[np.ndarray, ...]:
    d2 = g_h.dim
    sizes = d2 * d2

    def eval_loss(theta: np.ndarray) -> float:
        params = AttentionParams(
            w_k1=theta[:sizes].reshape(d2, d2),
            w_k2=theta[sizes : 2 * sizes].reshape(d2, d2),
            w_t=theta[2 * sizes :].reshape(d2, d2),
        )
        a1 = attention_forward(z1, params)
        a2 = attention_forward(z2, params)
        s_att = attention_similarity(a1.s_view, a2.s_view)
        return attention_loss(a1.h_view, a2.h_view, s_att, r, temps).value

    theta0 = np.concatenate([g_h.w_k1.ravel(), g_h.w_k2.ravel(), g_h.w_t.ravel()])
    grad = fd_gradient(eval_loss, theta0, _FD_STEP)
    return (
        grad[:sizes].reshape(d2, d2),
        grad[sizes : 2 * sizes].reshape(d2, d2),
        grad[2 * sizes :].reshape(d2, d2),
    )


def _instance_fd_grad(v1, v2, g_z, temps) -> np.ndarray:
    shape = g_z.shape

    def eval_loss(theta: np.ndarray) -> float:
        w = theta.reshape(shape)
        return instance_loss(v1 @ w, v2 @ w, temps).value

    return fd_gradient(eval_loss, g_z.ravel(), _FD_STEP).reshape(shape)


def _cluster_fd_grad(labels: PseudoLabels, v1, v2, g_p) -> np.ndarray:
    shape = g_p.shape

    def eval_loss(theta: np.ndarray) -> float:
        w = theta.reshape(shape)
        return cluster_loss(labels, softmax_rows(v1 @ w), softmax_rows(v2 @ w)).value

    return fd_gradient(eval_loss, g_p.ravel(), _FD_STEP).reshape(shape)


def run_pipeline(data: Dataset, config: RunConfig) -> RunReport:
    """Train the heads per the warm-up/transport schedule and report results.

    Epochs 1..e_warm label each batch with seeded k-means and update g_h (from
    the attention loss) and g_z (from lam * instance loss). Later epochs build
    S = S_cos + S_att from the batch predictions and attention maps, solve the
    transport problem for pseudo-labels, and additionally update g_p from the
    cluster loss. Final labels are the argmax of the anchor predictions over
    the whole dataset. Fully deterministic for a fixed dataset and config.
    """
    n = data.n
    rng = np.random.default_rng(config.seed)
    heads = init_heads(data.dim, data.k, config.d2, rng)

    kmeans_acc = None
    if data.y_true is not None:
        baseline = kmeans(data.v0, data.k, seed=config.seed)
        kmeans_acc = accuracy(data.y_true, baseline.labels)

    records: list[EpochRecord] = []
    last_trace: list[float] = []
    coupling_snapshot = None

    for epoch in range(1, config.e_total + 1):
        warmup = epoch <= config.e_warm
        order = rng.permutation(n)
        batches = [order[i : i + config.batch] for i in range(0, n, config.batch)]
        if len(batches) > 1 and batches[-1].size < 2:
            batches[-2] = np.concatenate([batches[-2], batches[-1]])
            batches.pop()

        sum_la = sum_li = sum_lp = 0.0
        matched = 0
        count = 0
        has_lp = False
        for idx in batches:
            batch_seed = int(rng.integers(2**31 - 1))
            v0b, v1b, v2b = data.v0[idx], data.v1[idx], data.v2[idx]
            z1, z2, p0, p1, p2, att1, att2 = forward_heads(v0b, v1b, v2b, heads)
            s_att = attention_similarity(att1.s_view, att2.s_view)

            if warmup:
                labels = kmeans(v0b, data.k, seed=batch_seed)
            else:
                s = cosine_matrix(p0) + s_att
                plan = caot_solve(OtProblem.from_probabilities(p0, s), config.caot)
                labels = labels_from_plan(plan.q)
                last_trace = list(plan.objective_trace)
                coupling_snapshot = plan.q
            r = same_cluster_sets(labels)

            la = attention_loss(att1.h_view, att2.h_view, s_att, r, config.temps).value
            li = instance_loss(z1, z2, config.temps).value
            if warmup:
                lp = None
                total = combined_loss("warmup", la, 0.0, li, config.lam)
            else:
                lp = cluster_loss(labels, p1, p2).value
                total = combined_loss("train", la, lp, li, config.lam)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch}")

            if config.grad_mode == "analytic":
                _, dw_k1, dw_k2, dw_t = attention_head_gradients(
                    z1, z2, heads.g_h, r, config.temps
                )
                _, d_gz = instance_head_gradient(v1b, v2b, heads.g_z, config.temps)
                d_gp = None
                if not warmup:
                    _, d_gp = cluster_head_gradient(labels, v1b, v2b, heads.g_p)
            else:
                dw_k1, dw_k2, dw_t = _attention_fd_grads(z1, z2, heads.g_h, r, config.temps)
                d_gz = _instance_fd_grad(v1b, v2b, heads.g_z, config.temps)
                d_gp = None
                if not warmup:
                    d_gp = _cluster_fd_grad(labels, v1b, v2b, heads.g_p)

            heads.g_h.w_k1 -= config.lr * dw_k1
            heads.g_h.w_k2 -= config.lr * dw_k2
            heads.g_h.w_t -= config.lr * dw_t
            heads.g_z -= config.lr * config.lam * d_gz
            if d_gp is not None:
                heads.g_p -= config.lr * d_gp

            sum_la += la * idx.size
            sum_li += li * idx.size
            if lp is not None:
                sum_lp += lp * idx.size
                has_lp = True
            count += idx.size
            if data.y_true is not None:
                mapped = accuracy(data.y_true[idx], labels.labels)
                matched += mapped * idx.size

        records.append(
            EpochRecord(
                epoch=epoch,
                warmup=warmup,
                label_source="kmeans" if warmup else "caot",
                loss_attention=sum_la / count,
                loss_instance=sum_li / count,
                loss_cluster=(sum_lp / count) if has_lp else None,
                loss_total=(sum_la + sum_lp + config.lam * sum_li) / count,
                pseudo_acc=(matched / count) if data.y_true is not None else None,
            )
        )

    final_p0 = softmax_rows(data.v0 @ heads.g_p)
    final_labels = labels_from_prediction(final_p0).labels
    final_acc = final_nmi = None
    if data.y_true is not None:
        final_acc = accuracy(data.y_true, final_labels)
        final_nmi = nmi(data.y_true, final_labels)
    return RunReport(
        records=records,
        kmeans_acc=kmeans_acc,
        final_acc=final_acc,
        final_nmi=final_nmi,
        final_labels=final_labels,
        heads=heads,
        objective_trace=last_trace,
        coupling_snapshot=coupling_snapshot,
    )


@dataclass
class BenchResult:
    """Three-way pseudo-labeler comparison on one trained state."""

    methods: list
    subset: np.ndarray
    couplings: dict
    labels: dict

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "subset": [int(i) for i in self.subset],
        }


def _class_subset(y_true: np.ndarray, k: int, per_class: int, rng: np.random.Generator) -> np.ndarray:
    picks = []
    for c in range(k):
        members = np.flatnonzero(y_true == c)
        take = min(per_class, members.size)
        chosen = rng.choice(members, size=take, replace=False)
        picks.append(np.sort(chosen))
    return np.concatenate(picks)


def pseudo_label_bench(
    data: Dataset, config: RunConfig, heads: Heads | None = None, per_class: int = 5
) -> BenchResult:
    """Compare prediction-only, adaptive-transport, and consistency-aware labels.

    Evaluates three labelings of the full dataset against the ground truth on
    a fixed trained state (trained here via run_pipeline unless heads are
    supplied): the raw prediction argmax, the transport plan with the
    semantic term disabled (eps3 = 0), and the full solve. Also extracts the
    three coupling matrices on a per_class-per-class sample subset ordered
    class-contiguously.
    """
    if data.y_true is None:
        raise ValueError("pseudo_label_bench requires ground-truth labels")
    if heads is None:
        heads = run_pipeline(data, config).heads

    _, _, p0, _, _, att1, att2 = forward_heads(data.v0, data.v1, data.v2, heads)
    s = cosine_matrix(p0) + attention_similarity(att1.s_view, att2.s_view)
    prob = OtProblem.from_probabilities(p0, s)
    plan_aot = caot_solve(prob, replace(config.caot, eps3=0.0))
    plan_caot = caot_solve(prob, config.caot)

    labelings = {
        "prediction": labels_from_prediction(p0).labels,
        "aot": labels_from_plan(plan_aot.q).labels,
        "caot": labels_from_plan(plan_caot.q).labels,
    }
    methods = [
        {
            "method": name,
            "acc": accuracy(data.y_true, labs),
            "nmi": nmi(data.y_true, labs),
        }
        for name, labs in labelings.items()
    ]

    rng = np.random.default_rng(config.seed)
    subset = _class_subset(data.y_true, data.k, per_class, rng)
    couplings = {
        "prediction": p0[subset],
        "aot": plan_aot.q[subset],
        "caot": plan_caot.q[subset],
    }
    return BenchResult(methods=methods, subset=subset, couplings=couplings, labels=labelings)
