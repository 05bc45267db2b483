"""Task heads, negative sampling, ranking/classification metrics and the train/eval loops."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .graph import DynamicGraph, GraphSnapshot
from .layers import Adam, Parameter, mlp2
from .model import DeftModel

LINK_PREDICTION = "link_prediction"
EDGE_CLASSIFICATION = "edge_classification"
NODE_CLASSIFICATION = "node_classification"
TASK_ALIASES = {"lp": LINK_PREDICTION, "ec": EDGE_CLASSIFICATION, "nc": NODE_CLASSIFICATION}

EVAL_SEED = 12345


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str = LINK_PREDICTION
    n_classes: int = 2
    negatives_per_positive: int = 9
    # negatives per positive edge in training batches
    train_negatives: int = 1
    # positive edges sampled per training timestep (0 = all)
    max_train_positives: int = 256
    # "truncated": one pass per epoch, optimizer step after every timestep, evolved
    #   weights carried forward as constants;
    # "sequence": one pass, losses summed over timesteps, one step per epoch;
    # "per_timestep": re-run the sequence from t=0 up to each t, step after each
    step_mode: str = "truncated"

    def __post_init__(self):
        object.__setattr__(self, "kind", TASK_ALIASES.get(self.kind, self.kind))
        if self.kind not in (LINK_PREDICTION, EDGE_CLASSIFICATION, NODE_CLASSIFICATION):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind != LINK_PREDICTION and self.n_classes < 2:
            raise ValueError("classification needs n_classes >= 2")
        if self.negatives_per_positive < 1 or self.train_negatives < 1:
            raise ValueError("need at least one negative per positive")
        if self.step_mode not in ("truncated", "sequence", "per_timestep"):
            raise ValueError("step_mode must be truncated, sequence or per_timestep")


@dataclass
class MetricsReport:
    mrr: float | None = None
    map: float | None = None
    micro_f1: float | None = None
    minority_f1: float | None = None
    loss_per_epoch: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        out = {}
        for k in ("mrr", "map", "micro_f1", "minority_f1"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out

    def summary_csv(self) -> str:
        return "metric,value\n" + "".join(f"{k},{v:.8g}\n" for k, v in self.summary().items())

    def loss_csv(self) -> str:
        return "epoch,loss\n" + "".join(f"{i},{v:.8g}\n" for i, v in enumerate(self.loss_per_epoch, 1))


def read_metric_csv(text: str) -> dict[str, float]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["metric", "value"]:
        raise ValueError("expected header 'metric,value'")
    return {k: float(v) for k, v in rows[1:]}


# -- heads -------------------------------------------------------------------------


@dataclass
class TaskHead:
    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter

    def __call__(self, x: Tensor) -> Tensor:
        return mlp2(x, self.W1, self.W2, "leaky_relu", self.b1, self.b2)


def attach_head(model: DeftModel, task: TaskSpec) -> TaskHead:
    """Create the task head inside the model's parameter store (so checkpoints include it)."""
    d = model.out_dim
    d_in = d if task.kind == NODE_CLASSIFICATION else 2 * d
    n_out = 2 if task.kind == LINK_PREDICTION else task.n_classes
    st = model.store
    return TaskHead(st.glorot("head.W1", d_in, d), st.zeros("head.b1", 1, d), st.glorot("head.W2", d, n_out),
                    st.zeros("head.b2", 1, n_out))


def pair_features(H: Tensor, pairs: np.ndarray) -> Tensor:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return ag.concat([ag.gather_rows(H, pairs[:, 0]), ag.gather_rows(H, pairs[:, 1])], axis=1)


def link_score(h_u: Tensor, h_v: Tensor, head: TaskHead) -> Tensor:
    """(no-edge, edge) logits of an MLP on h_u || h_v; rows are pairs."""
    if h_u.shape != h_v.shape:
        raise ShapeError(f"link_score: {h_u.shape} vs {h_v.shape}")
    return head(ag.concat([h_u, h_v], axis=1))


cross_entropy = ag.cross_entropy


# -- sampling ------------------------------------------------------------------------


def _edge_keys(g: GraphSnapshot) -> set[int]:
    e = g.edges()
    n = g.n_nodes
    return set((e[:, 0] * n + e[:, 1]).tolist()) | set((e[:, 1] * n + e[:, 0]).tolist())


def negative_sample(g: GraphSnapshot, n_neg: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform node pairs (u, v), u != v, that are not edges of ``g``; with replacement."""
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    n = g.n_nodes
    keys = _edge_keys(g)
    out = []
    budget = 100 * n_neg
    while len(out) < n_neg:
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u != v and u * n + v not in keys:
            out.append((u, v))
        else:
            budget -= 1
            if budget <= 0:
                raise SamplingError(f"no non-edge found after {100 * n_neg} rejections")
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def corrupt_destinations(g: GraphSnapshot, positives: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """For each positive (u, v): k targets w != u with (u, w) not an edge. Shape (P, k)."""
    n = g.n_nodes
    keys = _edge_keys(g)
    out = np.empty((len(positives), k), dtype=np.int64)
    for i, (u, _) in enumerate(positives):
        j = 0
        budget = 100 * k
        while j < k:
            w = int(rng.integers(0, n))
            if w != u and u * n + w not in keys:
                out[i, j] = w
                j += 1
            else:
                budget -= 1
                if budget <= 0:
                    raise SamplingError(f"node {u} has no non-neighbor")
    return out


def directed_edges(g: GraphSnapshot) -> np.ndarray:
    e = g.edges()
    return np.concatenate([e, e[:, ::-1]]) if len(e) else e.reshape(0, 2)


# -- metrics -------------------------------------------------------------------------


def tie_aware_rank(scores, index: int = 0) -> float:
    """Rank (1 = best) of scores[index] among all scores, descending; ties get the mean rank."""
    scores = np.asarray(scores, dtype=np.float64)
    s = scores[index]
    higher = int(np.sum(scores > s))
    tied = int(np.sum(scores == s))
    return higher + (tied + 1) / 2.0


def mrr(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("MRR of an empty query set is undefined")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / ranks))


def average_precision(relevance) -> float:
    rel = np.asarray(relevance, dtype=bool)
    if not rel.any():
        raise ValueError("query has no relevant item")
    hits = np.cumsum(rel)
    positions = np.nonzero(rel)[0]
    return float(np.mean(hits[positions] / (positions + 1)))


def map_metric(queries) -> float:
    """Mean average precision; each query is a relevance list in ranked order."""
    queries = list(queries)
    if not queries:
        raise ValueError("MAP of an empty query set is undefined")
    return float(np.mean([average_precision(q) for q in queries]))


def ranked_relevance(scores, relevant) -> np.ndarray:
    """Relevance flags in descending-score order."""
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    # AP has no mean-rank analogue for ties; tied blocks list irrelevant items first (pessimistic)
    order = np.lexsort((relevant.astype(int), -scores))
    return relevant[order]


def micro_f1(pred, labels, n_classes: int) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.size == 0 or pred.shape != labels.shape:
        raise ValueError("need equal, non-empty prediction and label arrays")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    tp = int(np.sum(pred == labels))
    wrong = pred.size - tp
    # each wrong prediction is one FP and one FN
    return tp / (tp + 0.5 * (wrong + wrong))


def minority_f1(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.size == 0 or pred.shape != labels.shape:
        raise ValueError("need equal, non-empty prediction and label arrays")
    classes, counts = np.unique(labels, return_counts=True)
    # equally rare classes: take the largest id (label 1 is the positive class of a balanced binary task)
    minority = classes[counts == counts.min()].max()
    tp = np.sum((pred == minority) & (labels == minority))
    fp = np.sum((pred == minority) & (labels != minority))
    fn = np.sum((pred != minority) & (labels == minority))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def link_metrics(scores_pos: np.ndarray, scores_neg: np.ndarray, sources: np.ndarray) -> tuple[float, float]:
    """MRR over positives and MAP over source nodes.

    ``scores_neg[i]`` are the scores of the negatives paired with positive i;
    a source's candidate set is all its positives plus all their negatives.
    """
    ranks = [tie_aware_rank(np.concatenate([[p], n])) for p, n in zip(scores_pos, scores_neg)]
    queries = []
    for u in np.unique(sources):
        sel = sources == u
        sc = np.concatenate([scores_pos[sel], scores_neg[sel].reshape(-1)])
        rel = np.concatenate([np.ones(sel.sum(), bool), np.zeros(scores_neg[sel].size, bool)])
        queries.append(ranked_relevance(sc, rel))
    return mrr(ranks), map_metric(queries)


# -- batches and loops ---------------------------------------------------------------


def _task_loss(task: TaskSpec, head: TaskHead, H: Tensor, graph: DynamicGraph, t: int, rng) -> Tensor | None:
    g = graph[t]
    if task.kind == LINK_PREDICTION:
        target = graph[t + 1]
        pos = directed_edges(target)
        if len(pos) == 0:
            return None
        if task.max_train_positives and len(pos) > task.max_train_positives:
            pos = pos[rng.choice(len(pos), task.max_train_positives, replace=False)]
        neg = negative_sample(target, task.train_negatives * len(pos), rng)
        pairs = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos), int), np.zeros(len(neg), int)])
        return ag.cross_entropy(head(pair_features(H, pairs)), labels)
    if task.kind == EDGE_CLASSIFICATION:
        if not g.edge_labels:
            return None
        pairs = np.array(sorted(g.edge_labels), dtype=np.int64)
        labels = np.array([g.edge_labels[tuple(p)] for p in pairs.tolist()])
        return ag.cross_entropy(head(pair_features(H, pairs)), labels)
    if g.node_labels is None:
        return None
    return ag.cross_entropy(head(H), np.asarray(g.node_labels).reshape(-1))


def train_range(graph: DynamicGraph, task: TaskSpec) -> range:
    train_end = graph.split[0]
    # LP at t uses snapshot t+1 as the target; keep targets inside the training split
    return range(train_end - 1) if task.kind == LINK_PREDICTION else range(train_end)


def _sum_losses(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = ag.add(total, l)
    return ag.scale(total, 1.0 / len(losses))


def train_epoch(graph: DynamicGraph, model: DeftModel, head: TaskHead, task: TaskSpec, optimizer: Adam,
                rng: np.random.Generator) -> float:
    """One epoch over the training timesteps; returns the mean per-timestep loss."""
    steps = train_range(graph, task)
    if len(steps) == 0:
        raise ValueError("training split has no usable timesteps")
    if task.step_mode == "truncated":
        state = model.initial_state()
        values = []
        for t in steps:
            optimizer.zero_grad()
            H = model.forward(graph[t], state).embeddings
            loss = _task_loss(task, head, H, graph, t, rng)
            if loss is not None:
                loss.backward()
                optimizer.step()
                values.append(loss.item())
            state.detach()
        if not values:
            raise ValueError("no training batch had targets")
        return float(np.mean(values))
    if task.step_mode == "per_timestep":
        values = []
        for t in steps:
            optimizer.zero_grad()
            H = model.sequence_forward(graph, range(t + 1))[-1].embeddings
            loss = _task_loss(task, head, H, graph, t, rng)
            if loss is None:
                continue
            loss.backward()
            optimizer.step()
            values.append(loss.item())
        if not values:
            raise ValueError("no training batch had targets")
        return float(np.mean(values))
    optimizer.zero_grad()
    outs = model.sequence_forward(graph, steps)
    losses = [l for t, o in zip(steps, outs) if (l := _task_loss(task, head, o.embeddings, graph, t, rng)) is not None]
    if not losses:
        raise ValueError("no training batch had targets")
    loss = _sum_losses(losses)
    loss.backward()
    optimizer.step()
    return loss.item()


def split_targets(graph: DynamicGraph, split: str) -> range:
    train_end, val_end, test_end = graph.split
    if split == "val":
        return range(train_end, val_end)
    if split == "test":
        return range(val_end, test_end)
    if split == "train":
        return range(1, train_end)
    raise ValueError(f"unknown split {split!r}")


def evaluate(graph: DynamicGraph, model: DeftModel, head: TaskHead, task: TaskSpec, split: str = "val",
             seed: int = EVAL_SEED) -> MetricsReport:
    """Metrics averaged over the split's timesteps; no gradients, fixed negative-sampling seed.

    For LP the target snapshot t is scored from embeddings at t - 1, with the
    weight state evolved from the start of the sequence.
    """
    targets = split_targets(graph, split)
    if task.kind != LINK_PREDICTION:
        targets = range(targets.start - 1 if split == "train" else targets.start, targets.stop)
    if len(targets) == 0:
        raise ValueError(f"split {split!r} is empty")
    rng = np.random.default_rng(seed)
    last = max(targets) if task.kind != LINK_PREDICTION else max(targets) - 1
    with ag.no_grad():
        outs = model.sequence_forward(graph, range(last + 1))
        report = MetricsReport()
        if task.kind == LINK_PREDICTION:
            mrrs, maps = [], []
            for t in targets:
                g = graph[t]
                pos = directed_edges(g)
                if len(pos) == 0:
                    continue
                H = outs[t - 1].embeddings
                neg = corrupt_destinations(g, pos, task.negatives_per_positive, rng)
                s_pos = _edge_scores(head, H, pos)
                negpairs = np.stack([np.repeat(pos[:, 0], neg.shape[1]), neg.reshape(-1)], axis=1)
                s_neg = _edge_scores(head, H, negpairs).reshape(neg.shape)
                a, b = link_metrics(s_pos, s_neg, pos[:, 0])
                mrrs.append(a)
                maps.append(b)
            if not mrrs:
                raise ValueError(f"split {split!r} has no target edges")
            report.mrr, report.map = float(np.mean(mrrs)), float(np.mean(maps))
            return report
        preds, labels = [], []
        for t in targets:
            g = graph[t]
            H = outs[t].embeddings
            if task.kind == EDGE_CLASSIFICATION:
                if not g.edge_labels:
                    continue
                pairs = np.array(sorted(g.edge_labels), dtype=np.int64)
                logits = head(pair_features(H, pairs)).value
                labels.append(np.array([g.edge_labels[tuple(p)] for p in pairs.tolist()]))
            else:
                if g.node_labels is None:
                    continue
                logits = head(H).value
                labels.append(np.asarray(g.node_labels).reshape(-1))
            preds.append(np.argmax(logits, axis=1))
        if not preds:
            raise ValueError(f"split {split!r} has no labels")
        p, y = np.concatenate(preds), np.concatenate(labels)
        report.micro_f1 = micro_f1(p, y, task.n_classes)
        report.minority_f1 = minority_f1(p, y)
        return report


def _edge_scores(head: TaskHead, H: Tensor, pairs: np.ndarray) -> np.ndarray:
    logits = head(pair_features(H, pairs)).value
    return logits[:, 1] - logits[:, 0]


@dataclass
class TrainResult:
    losses: list[float]
    val: MetricsReport
    best_epoch: int


def fit(graph: DynamicGraph, model: DeftModel, head: TaskHead, task: TaskSpec, epochs: int, lr: float = 1e-3,
        seed: int = 0, eval_every: int = 0, target_map: float | None = None) -> TrainResult:
    """Train for ``epochs`` epochs; optionally evaluate every ``eval_every`` epochs.

    ``target_map`` stops training once the validation MAP reaches it.
    """
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    losses = []
    val = None
    best_epoch = epochs
    for epoch in range(1, epochs + 1):
        losses.append(train_epoch(graph, model, head, task, opt, rng))
        if eval_every and epoch % eval_every == 0:
            val = evaluate(graph, model, head, task, "val")
            if target_map is not None and val.map is not None and val.map >= target_map:
                best_epoch = epoch
                break
    if val is None or (eval_every and len(losses) % eval_every):
        val = evaluate(graph, model, head, task, "val")
    val.loss_per_epoch = losses
    return TrainResult(losses, val, best_epoch if best_epoch < epochs else len(losses))
