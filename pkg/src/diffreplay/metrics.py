"""Evaluation suite: accuracy-matrix reductions, desk-scale generative metrics
(Fréchet distance, k-NN manifold precision/recall), and representation probes.

All metrics are pure functions of stored artifacts, so reports can be
regenerated bitwise from saved matrices and embeddings.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F

from .utils import derive_seed, torch_generator

FID_EMBEDDER_SEED = 90613
H_SPACE = "h_space"
CLASSIFIER_PENULTIMATE = "classifier_penultimate"


class AccuracyMatrix:
    """Lower-triangular matrix: a[i][j] = accuracy (percent) on task j's test set
    after training phase i, for j <= i."""

    def __init__(self, num_tasks):
        if num_tasks < 1:
            raise ValueError("need at least one task")
        self.num_tasks = int(num_tasks)
        self._a = np.full((num_tasks, num_tasks), np.nan, dtype=np.float64)

    def record(self, phase, task, value):
        if not 0 <= task <= phase < self.num_tasks:
            raise IndexError(f"need 0 <= task <= phase < {self.num_tasks}, got ({phase}, {task})")
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"accuracy must lie in [0, 100], got {value}")
        self._a[phase, task] = float(value)

    def value(self, phase, task):
        v = self._a[phase, task]
        if np.isnan(v):
            raise ValueError(f"entry ({phase}, {task}) not recorded")
        return float(v)

    def row(self, phase):
        return [float(v) for v in self._a[phase, : phase + 1]]

    @property
    def last_row(self):
        return self.row(self.num_tasks - 1)

    def diagonal(self):
        return [float(self._a[i, i]) for i in range(self.num_tasks)]

    def is_complete(self):
        return all(not np.isnan(self._a[i, j])
                   for i in range(self.num_tasks) for j in range(i + 1))

    def to_list(self):
        return [self.row(i) for i in range(self.num_tasks)]

    @staticmethod
    def from_list(rows):
        matrix = AccuracyMatrix(len(rows))
        for i, row in enumerate(rows):
            if len(row) != i + 1:
                raise ValueError(f"row {i} must have {i + 1} entries, got {len(row)}")
            for j, v in enumerate(row):
                matrix.record(i, j, v)
        return matrix

    def __eq__(self, other):
        return (isinstance(other, AccuracyMatrix)
                and self.num_tasks == other.num_tasks
                and np.array_equal(self._a, other._a, equal_nan=True))

    def __repr__(self):
        return f"AccuracyMatrix({self.to_list()})"


def average_accuracy(matrix):
    """Mean of the final row: accuracy over all tasks after the last phase."""
    if not matrix.is_complete():
        raise ValueError("matrix has unrecorded entries")
    return float(np.mean(matrix.last_row))


def average_forgetting(matrix):
    """Mean, over the non-final tasks, of the drop from each task's best-ever
    accuracy (including the final phase) to its final accuracy. Non-negative."""
    T = matrix.num_tasks
    if T < 2:
        raise ValueError("forgetting needs at least two tasks")
    if not matrix.is_complete():
        raise ValueError("matrix has unrecorded entries")
    drops = []
    for j in range(T - 1):
        best = max(matrix.value(l, j) for l in range(j, T))
        drops.append(best - matrix.value(T - 1, j))
    return float(np.mean(drops))


def transfer_metrics(matrix, reference_diag):
    """Backward/forward transfer over the matrix.

    bwt averages final-row minus diagonal over non-final tasks; fwt averages
    diagonal minus ``reference_diag`` (single-task-training accuracies, one per
    task; the first entry is unused) over tasks after the first.
    """
    T = matrix.num_tasks
    if T < 2:
        raise ValueError("transfer metrics need at least two tasks")
    if len(reference_diag) != T:
        raise ValueError(f"reference_diag must have {T} entries, got {len(reference_diag)}")
    if not matrix.is_complete():
        raise ValueError("matrix has unrecorded entries")
    bwt = np.mean([matrix.value(T - 1, i) - matrix.value(i, i) for i in range(T - 1)])
    fwt = np.mean([matrix.value(i, i) - reference_diag[i] for i in range(1, T)])
    return float(fwt), float(bwt)


@dataclass
class EmbeddingStats:
    mean: np.ndarray
    cov: np.ndarray

    @staticmethod
    def from_embeddings(embeddings):
        x = np.asarray(embeddings, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need a 2-D array with at least 2 embeddings")
        return EmbeddingStats(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False))


def _psd_sqrt(matrix, tol=-1e-6):
    """Symmetric PSD square root via eigendecomposition, clipping tiny negatives."""
    vals, vecs = np.linalg.eigh(matrix)
    if np.any(vals < tol):
        raise ValueError(f"matrix not PSD: min eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(real_embeddings, gen_embeddings, *, eps=1e-6):
    """Fréchet distance ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}).

    Both covariances are regularized with ``eps`` times the identity; the cross
    square root is taken in the symmetric form A^{1/2} B A^{1/2}.
    """
    r = EmbeddingStats.from_embeddings(real_embeddings)
    g = EmbeddingStats.from_embeddings(gen_embeddings)
    dim = r.mean.shape[0]
    if g.mean.shape[0] != dim:
        raise ValueError("embedding dimensions differ")
    cov_r = r.cov + eps * np.eye(dim)
    cov_g = g.cov + eps * np.eye(dim)
    sqrt_r = _psd_sqrt(cov_r)
    cross = _psd_sqrt(sqrt_r @ cov_g @ sqrt_r)
    diff = r.mean - g.mean
    value = float(diff @ diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def precision_recall(real_embeddings, gen_embeddings, k=3):
    """k-NN manifold precision/recall.

    A generated point counts as precise when it falls within the k-th-neighbor
    radius of at least one real point; recall swaps the roles.
    """
    real = np.asarray(real_embeddings, dtype=np.float64)
    gen = np.asarray(gen_embeddings, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2:
        raise ValueError("embeddings must be 2-D arrays")
    if k < 1 or k >= real.shape[0] or k >= gen.shape[0]:
        raise ValueError(f"need 1 <= k < set sizes, got k={k}")

    def radii(points):
        d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
        d.sort(axis=1)
        return d[:, k]

    def covered(queries, anchors, anchor_radii):
        d = np.linalg.norm(queries[:, None, :] - anchors[None, :, :], axis=-1)
        return float(np.mean(np.any(d <= anchor_radii[None, :], axis=1)))

    precision = covered(gen, real, radii(real))
    recall = covered(real, gen, radii(gen))
    return precision, recall


class RandomConvEmbedder(torch.nn.Module):
    """Frozen randomly-initialized conv encoder used as a shared FID embedding.

    Initialized from a fixed seed so embeddings are comparable across runs;
    meaningful only for relative comparisons, not absolute FID values.
    """

    def __init__(self, in_channels, embed_dim=64, seed=FID_EMBEDDER_SEED):
        super().__init__()
        gen = torch_generator(derive_seed(seed, "fid-embedder", in_channels, embed_dim))
        self.conv1 = torch.nn.Conv2d(in_channels, 32, 3, stride=2, padding=1)
        self.conv2 = torch.nn.Conv2d(32, embed_dim, 3, stride=2, padding=1)
        for p in self.parameters():
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.2)
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def embed(self, images, batch_size=256):
        chunks = []
        for start in range(0, images.shape[0], batch_size):
            x = images[start:start + batch_size]
            h = F.silu(self.conv1(x))
            h = F.silu(self.conv2(h))
            chunks.append(h.mean(dim=(2, 3)))
        return torch.cat(chunks).double().numpy()


@torch.no_grad()
def evaluate_accuracy(model, images, labels, batch_size=256):
    """Argmax accuracy of a classifier on a labeled set, in percent."""
    if images.shape[0] == 0:
        raise ValueError("empty evaluation set")
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        x = images[start:start + batch_size]
        y = labels[start:start + batch_size]
        pred = model.classify(x).logits.argmax(dim=1)
        correct += int((pred == y).sum())
    return 100.0 * correct / images.shape[0]


def _extract_features(model, images, feature_source, batch_size=256):
    with torch.no_grad():
        chunks = []
        for start in range(0, images.shape[0], batch_size):
            x = images[start:start + batch_size]
            if feature_source == H_SPACE:
                chunks.append(model.bottleneck_features(x))
            elif feature_source == CLASSIFIER_PENULTIMATE:
                chunks.append(model.penultimate_features(x))
            else:
                raise ValueError(f"unknown feature source {feature_source!r}")
        return torch.cat(chunks)


def _knn_accuracy(train_features, train_labels, test_features, test_labels, k):
    """Cosine-similarity k-NN majority vote, accuracy in percent."""
    anchor = F.normalize(train_features, dim=1)
    queries = F.normalize(test_features, dim=1)
    sims = queries @ anchor.T
    nearest = sims.topk(k, dim=1).indices
    votes = train_labels[nearest]
    num_classes = int(train_labels.max()) + 1
    counts = torch.zeros(queries.shape[0], num_classes, dtype=torch.int64)
    counts.scatter_add_(1, votes, torch.ones_like(votes))
    pred = counts.argmax(dim=1)
    return 100.0 * float((pred == test_labels).float().mean())


def knn_drift_probe(checkpoints, task1_data, k=5, feature_source=H_SPACE):
    """Accuracy curve of a k-NN classifier anchored at the first checkpoint.

    The reference set is the task-1 training features under checkpoint 1; each
    curve entry evaluates task-1 test features extracted by a later checkpoint
    against that fixed reference, measuring how far the representation drifted.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    anchor = _extract_features(checkpoints[0], task1_data.images, feature_source)
    labels = task1_data.labels
    dims = {int(_extract_features(m, task1_data.test_images[:1], feature_source).shape[1])
            for m in checkpoints}
    if len(dims) != 1:
        raise ValueError(f"feature dimension differs across checkpoints: {sorted(dims)}")
    if k >= anchor.shape[0]:
        raise ValueError(f"k={k} too large for {anchor.shape[0]} anchor points")
    curve = []
    for model in checkpoints:
        test_features = _extract_features(model, task1_data.test_images, feature_source)
        curve.append(_knn_accuracy(anchor, labels, test_features, task1_data.test_labels, k))
    return curve


def linear_probe(checkpoint, dataset, max_iter=1000):
    """Accuracy of a multinomial logistic regression on pooled encoder features."""
    from sklearn.linear_model import LogisticRegression

    with torch.no_grad():
        train = checkpoint.pooled_features(dataset.images).double().numpy()
        test = checkpoint.pooled_features(dataset.test_images).double().numpy()
    clf = LogisticRegression(max_iter=max_iter)
    clf.fit(train, dataset.labels.numpy())
    return 100.0 * float(clf.score(test, dataset.test_labels.numpy()))


@dataclass
class MetricsReport:
    avg_accuracy: float
    avg_forgetting: float
    fwt: float = float("nan")
    bwt: float = float("nan")
    accuracy_matrix: list = field(default_factory=list)
    task_curves: dict = field(default_factory=dict)
    generative: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text):
        return MetricsReport(**json.loads(text))

    @staticmethod
    def from_matrix(matrix, *, reference_diag=None, metadata=None):
        forgetting = average_forgetting(matrix) if matrix.num_tasks > 1 else 0.0
        report = MetricsReport(
            avg_accuracy=average_accuracy(matrix),
            avg_forgetting=forgetting,
            accuracy_matrix=matrix.to_list(),
            metadata=metadata or {},
        )
        if reference_diag is not None and matrix.num_tasks > 1:
            report.fwt, report.bwt = transfer_metrics(matrix, reference_diag)
        return report
