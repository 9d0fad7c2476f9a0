"""Datasets and class-incremental task streams.

Images are stored as float32 tensors in [-1, 1] with a fixed (C, H, W) shape.
Unlabeled examples (semi-supervised setups) carry the sentinel label
``UNLABELED`` so that supervised and SSL paths share one batch type.
"""

import os
import pickle
from dataclasses import dataclass, field, replace

import numpy as np
import torch

UNLABELED = -1
DATA_ROOT_ENV = "DIFFREPLAY_DATA_ROOT"

TOY_GAUSS_2D = "toy-gauss-2d"
TOY_SHAPES_8 = "toy-shapes-8"
CIFAR10 = "cifar10"
CIFAR100 = "cifar100"
DATASET_IDS = (TOY_GAUSS_2D, TOY_SHAPES_8, CIFAR10, CIFAR100)

# default class counts per dataset id
_DEFAULT_NUM_CLASSES = {TOY_GAUSS_2D: 4, TOY_SHAPES_8: 10, CIFAR10: 10, CIFAR100: 100}


@dataclass
class TaskSpec:
    """One task of a class-incremental stream: train and test examples over a
    disjoint set of class ids."""

    task_index: int  # 1-based
    class_ids: tuple
    images: torch.Tensor
    labels: torch.Tensor
    test_images: torch.Tensor
    test_labels: torch.Tensor

    def __len__(self):
        return self.images.shape[0]

    def validate(self):
        if self.task_index < 1:
            raise ValueError(f"task_index must be >= 1, got {self.task_index}")
        allowed = set(self.class_ids) | {UNLABELED}
        for name, labels in (("train", self.labels), ("test", self.test_labels)):
            bad = set(labels.tolist()) - allowed
            if bad:
                raise ValueError(f"{name} labels {sorted(bad)} outside task classes {self.class_ids}")
        if self.images.shape[1:] != self.test_images.shape[1:]:
            raise ValueError("train/test image shapes differ")
        for t in (self.images, self.test_images):
            if t.numel() and (t.min() < -1.0 - 1e-6 or t.max() > 1.0 + 1e-6):
                raise ValueError("images must lie in [-1, 1]")


@dataclass
class TaskStream:
    """Ordered class-incremental tasks covering ``num_classes`` classes."""

    tasks: list
    num_classes: int
    label_ratio: float = 1.0
    dataset_id: str = ""

    @property
    def num_tasks(self):
        return len(self.tasks)

    @property
    def image_shape(self):
        return tuple(self.tasks[0].images.shape[1:])

    def classes_up_to(self, task_index):
        """All class ids from tasks 1..task_index (inclusive)."""
        ids = []
        for task in self.tasks[:task_index]:
            ids.extend(task.class_ids)
        return tuple(ids)

    def validate(self):
        seen = set()
        for position, task in enumerate(self.tasks, start=1):
            if task.task_index != position:
                raise ValueError("tasks must be ordered by task_index")
            task.validate()
            overlap = seen & set(task.class_ids)
            if overlap:
                raise ValueError(f"class ids {sorted(overlap)} appear in more than one task")
            seen |= set(task.class_ids)
        if len(seen) != self.num_classes:
            raise ValueError(f"tasks cover {len(seen)} classes, expected {self.num_classes}")


# ---------------------------------------------------------------------------
# raw dataset loading / synthesis
# ---------------------------------------------------------------------------

def _resolve_root(data_root):
    root = data_root or os.environ.get(DATA_ROOT_ENV)
    if root is None:
        raise FileNotFoundError(
            f"no dataset root given; pass data_root or set ${DATA_ROOT_ENV}"
        )
    return root


def _load_cifar_batches(paths, label_key):
    xs, ys = [], []
    for path in paths:
        with open(path, "rb") as fh:
            entry = pickle.load(fh, encoding="bytes")
        xs.append(entry[b"data"])
        ys.extend(entry[label_key])
    x = np.concatenate(xs).reshape(-1, 3, 32, 32).astype(np.float32)
    x = x / 127.5 - 1.0
    return torch.from_numpy(x), torch.tensor(ys, dtype=torch.int64)


def _load_cifar10(data_root):
    base = os.path.join(_resolve_root(data_root), "cifar-10-batches-py")
    if not os.path.isdir(base):
        raise FileNotFoundError(f"expected CIFAR-10 batches at {base}")
    train = [os.path.join(base, f"data_batch_{i}") for i in range(1, 6)]
    train_x, train_y = _load_cifar_batches(train, b"labels")
    test_x, test_y = _load_cifar_batches([os.path.join(base, "test_batch")], b"labels")
    return train_x, train_y, test_x, test_y


def _load_cifar100(data_root):
    base = os.path.join(_resolve_root(data_root), "cifar-100-python")
    if not os.path.isdir(base):
        raise FileNotFoundError(f"expected CIFAR-100 data at {base}")
    train_x, train_y = _load_cifar_batches([os.path.join(base, "train")], b"fine_labels")
    test_x, test_y = _load_cifar_batches([os.path.join(base, "test")], b"fine_labels")
    return train_x, train_y, test_x, test_y


def gauss2d_mode_centers(num_classes, radius=0.55):
    """Per-class mode centers, evenly spaced on a circle."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


GAUSS2D_STD = 0.07


def sample_gauss2d_class(class_id, count, rng, num_classes, std=GAUSS2D_STD):
    """Closed-form sampler for one mode of the 2-D mixture (also the test oracle)."""
    centers = gauss2d_mode_centers(num_classes)
    pts = rng.normal(loc=centers[class_id], scale=std, size=(count, 2))
    return np.clip(pts, -1.0, 1.0).astype(np.float32)


def _make_gauss2d(seed, num_classes, per_class_train, per_class_test):
    rng = np.random.default_rng(seed)
    xs, ys, txs, tys = [], [], [], []
    for cls in range(num_classes):
        xs.append(sample_gauss2d_class(cls, per_class_train, rng, num_classes))
        ys.extend([cls] * per_class_train)
        txs.append(sample_gauss2d_class(cls, per_class_test, rng, num_classes))
        tys.extend([cls] * per_class_test)
    train_x = torch.from_numpy(np.concatenate(xs)).reshape(-1, 2, 1, 1)
    test_x = torch.from_numpy(np.concatenate(txs)).reshape(-1, 2, 1, 1)
    return train_x, torch.tensor(ys), test_x, torch.tensor(tys)


def shape_template(class_id, size=8):
    """Binary 8x8 template for one shape class (0..9)."""
    t = np.zeros((size, size), dtype=np.float32)
    mid = size // 2
    if class_id == 0:  # horizontal bar
        t[mid - 1 : mid + 1, :] = 1
    elif class_id == 1:  # vertical bar
        t[:, mid - 1 : mid + 1] = 1
    elif class_id == 2:  # main diagonal
        for i in range(size):
            t[i, i] = 1
            t[i, max(i - 1, 0)] = 1
    elif class_id == 3:  # anti-diagonal
        for i in range(size):
            t[i, size - 1 - i] = 1
            t[i, min(size - i, size - 1)] = 1
    elif class_id == 4:  # plus
        t[mid - 1 : mid + 1, :] = 1
        t[:, mid - 1 : mid + 1] = 1
    elif class_id == 5:  # X
        for i in range(size):
            t[i, i] = 1
            t[i, size - 1 - i] = 1
    elif class_id == 6:  # hollow square
        t[1:-1, 1] = t[1:-1, -2] = 1
        t[1, 1:-1] = t[-2, 1:-1] = 1
    elif class_id == 7:  # filled centre block
        t[2:-2, 2:-2] = 1
    elif class_id == 8:  # checkerboard of 2x2 blocks
        for i in range(size):
            for j in range(size):
                if (i // 2 + j // 2) % 2 == 0:
                    t[i, j] = 1
    elif class_id == 9:  # four corner blocks
        t[:2, :2] = t[:2, -2:] = t[-2:, :2] = t[-2:, -2:] = 1
    else:
        raise ValueError(f"no shape template for class {class_id}")
    return t


def _make_shapes_split(rng, num_classes, per_class, size=8):
    xs, ys = [], []
    for cls in range(num_classes):
        template = shape_template(cls, size)
        for _ in range(per_class):
            img = template.copy()
            img = np.roll(img, rng.integers(-2, 3), axis=0)
            img = np.roll(img, rng.integers(-2, 3), axis=1)
            contrast = rng.uniform(0.55, 1.0)
            img = (img * contrast) * 2.0 - 1.0
            img = img + rng.normal(0.0, 0.25, size=img.shape)
            xs.append(np.clip(img, -1.0, 1.0).astype(np.float32))
            ys.append(cls)
    x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
    return x, torch.tensor(ys, dtype=torch.int64)


def _make_shapes8(seed, num_classes, per_class_train, per_class_test):
    rng = np.random.default_rng(seed)
    train_x, train_y = _make_shapes_split(rng, num_classes, per_class_train)
    test_x, test_y = _make_shapes_split(rng, num_classes, per_class_test)
    return train_x, train_y, test_x, test_y


# ---------------------------------------------------------------------------
# stream construction
# ---------------------------------------------------------------------------

def build_class_incremental_splits(
    dataset_id,
    num_tasks,
    seed,
    *,
    data_root=None,
    num_classes=None,
    per_class_train=256,
    per_class_test=128,
    shuffle_classes=False,
):
    """Split a dataset into ``num_tasks`` tasks with disjoint class sets.

    Classes are assigned to tasks in ascending id order by default; pass
    ``shuffle_classes=True`` for a seed-controlled assignment. Toy datasets
    (``toy-gauss-2d``, ``toy-shapes-8``) are synthesized deterministically
    from the seed; CIFAR variants are read from ``data_root`` (or
    ``$DIFFREPLAY_DATA_ROOT``) in their standard on-disk layouts.
    """
    if dataset_id not in DATASET_IDS:
        raise ValueError(f"unknown dataset_id {dataset_id!r}; expected one of {DATASET_IDS}")
    k = num_classes or _DEFAULT_NUM_CLASSES[dataset_id]
    if dataset_id in (CIFAR10, CIFAR100) and k != _DEFAULT_NUM_CLASSES[dataset_id]:
        raise ValueError(f"{dataset_id} has a fixed class count")
    if num_tasks < 1 or k % num_tasks != 0:
        raise ValueError(f"num_tasks={num_tasks} must divide the class count {k}")

    data_seed = int(seed)
    if dataset_id == TOY_GAUSS_2D:
        train_x, train_y, test_x, test_y = _make_gauss2d(data_seed, k, per_class_train, per_class_test)
    elif dataset_id == TOY_SHAPES_8:
        train_x, train_y, test_x, test_y = _make_shapes8(data_seed, k, per_class_train, per_class_test)
    elif dataset_id == CIFAR10:
        train_x, train_y, test_x, test_y = _load_cifar10(data_root)
    else:
        train_x, train_y, test_x, test_y = _load_cifar100(data_root)

    order = np.arange(k)
    if shuffle_classes:
        np.random.default_rng(data_seed).shuffle(order)

    per_task = k // num_tasks
    tasks = []
    for idx in range(num_tasks):
        class_ids = tuple(int(c) for c in order[idx * per_task : (idx + 1) * per_task])
        train_mask = torch.isin(train_y, torch.tensor(class_ids))
        test_mask = torch.isin(test_y, torch.tensor(class_ids))
        tasks.append(
            TaskSpec(
                task_index=idx + 1,
                class_ids=class_ids,
                images=train_x[train_mask].clone(),
                labels=train_y[train_mask].clone(),
                test_images=test_x[test_mask].clone(),
                test_labels=test_y[test_mask].clone(),
            )
        )
    stream = TaskStream(tasks=tasks, num_classes=k, dataset_id=dataset_id)
    stream.validate()
    return stream


def subsample_labels(stream, ratio, seed):
    """Keep labels for a per-class fraction of train examples; mask the rest.

    The multiset of images is unchanged; only labels are replaced by the
    ``UNLABELED`` sentinel. Test splits stay fully labeled.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return stream
    rng = np.random.default_rng(int(seed))
    new_tasks = []
    for task in stream.tasks:
        labels = task.labels.clone()
        for cls in task.class_ids:
            idx = torch.nonzero(task.labels == cls, as_tuple=True)[0].numpy()
            keep = int(round(ratio * len(idx)))
            if keep < 1:
                raise ValueError(
                    f"ratio {ratio} leaves class {cls} with no labeled examples"
                )
            kept = rng.choice(idx, size=keep, replace=False)
            drop = np.setdiff1d(idx, kept)
            labels[torch.from_numpy(drop)] = UNLABELED
        new_tasks.append(replace(task, labels=labels))
    return replace(stream, tasks=new_tasks, label_ratio=float(ratio))


def labeled_split(images, labels):
    """Partition a batch into (labeled, unlabeled) parts by the sentinel."""
    mask = labels != UNLABELED
    return (images[mask], labels[mask]), (images[~mask], labels[~mask])
