import warnings as warnings_module

import pytest
import torch

from diffreplay.diffusion import make_linear_schedule
from diffreplay.replay import (
    SyntheticDataset,
    empty_synthetic_dataset,
    generate_labeled_samples,
    merge_rehearsal,
)
from diffreplay.utils import param_hash, torch_generator
from helpers import ZeroNoiseModel


def _dataset(n=4, classes=(0, 1), task_range=(1, 1), quota=8):
    labels = torch.tensor([classes[i % len(classes)] for i in range(n)])
    return SyntheticDataset(
        images=torch.zeros(n, 1, 2, 2),
        labels=labels,
        class_set=tuple(classes),
        source_task_range=task_range,
        per_class_quota=quota,
        provenance=tuple("synthetic" for _ in range(n)),
    )


def test_synthetic_dataset_validate_accepts_consistent_data():
    ds = _dataset()
    ds.validate()
    assert len(ds) == 4
    assert ds.class_counts() == {0: 2, 1: 2}


def test_synthetic_dataset_validate_rejects_label_outside_class_set():
    ds = _dataset()
    ds.labels[0] = 7
    with pytest.raises(ValueError):
        ds.validate()


def test_synthetic_dataset_validate_rejects_quota_overflow():
    ds = _dataset(n=6, classes=(0,), quota=2)
    with pytest.raises(ValueError):
        ds.validate()


def test_synthetic_dataset_validate_rejects_out_of_range_pixels():
    ds = _dataset()
    ds.images[0, 0, 0, 0] = 2.0
    with pytest.raises(ValueError):
        ds.validate()


def test_synthetic_dataset_validate_rejects_provenance_mismatch():
    ds = _dataset()
    ds = SyntheticDataset(
        images=ds.images, labels=ds.labels, class_set=ds.class_set,
        source_task_range=ds.source_task_range, per_class_quota=ds.per_class_quota,
        provenance=("synthetic",),
    )
    with pytest.raises(ValueError):
        ds.validate()


def test_empty_synthetic_dataset():
    ds = empty_synthetic_dataset((1, 4, 4))
    assert len(ds) == 0
    ds.validate()
    assert ds.class_counts() == {}


def test_generate_labeled_samples_fills_quota_with_valid_labels():
    model = ZeroNoiseModel(num_classes=4)
    sched = make_linear_schedule(20)
    ds = generate_labeled_samples(
        model, sched, [1, 2], 5, ddim_steps=5, batch_size=16,
        generator=torch_generator(0), provenance="test", source_task_range=(1, 2),
    )
    ds.validate()
    assert set(ds.labels.tolist()).issubset({1, 2})
    assert ds.class_counts() == {1: 5, 2: 5}
    assert ds.fill_rates == {1: 1.0, 2: 1.0}
    assert all(p == "test" for p in ds.provenance)
    assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0
    assert ds.warnings == ()


def test_generate_labeled_samples_deterministic():
    model = ZeroNoiseModel(num_classes=4)
    sched = make_linear_schedule(20)
    a = generate_labeled_samples(model, sched, [0, 1], 4, ddim_steps=5, batch_size=8,
                                 generator=torch_generator(5))
    b = generate_labeled_samples(model, sched, [0, 1], 4, ddim_steps=5, batch_size=8,
                                 generator=torch_generator(5))
    assert torch.equal(a.images, b.images)
    assert torch.equal(a.labels, b.labels)


def test_generate_labeled_samples_starvation_warns_and_partial_fills():
    model = ZeroNoiseModel(num_classes=4)  # never emits class 3 given mild samples? use empty class
    sched = make_linear_schedule(20)

    class NeverClassThree(ZeroNoiseModel):
        def classify(self, x, t=None):
            out = super().classify(x, t)
            logits = out.logits.clone()
            logits[:, 3] = -1e9
            out = type(out)(logits=logits, penultimate=logits, pooled=logits)
            return out

    starving = NeverClassThree(num_classes=4)
    with pytest.warns(UserWarning):
        ds = generate_labeled_samples(
            starving, sched, [3], 4, ddim_steps=4, batch_size=8, max_attempts=3,
            generator=torch_generator(1),
        )
    assert len(ds) == 0
    assert ds.fill_rates == {3: 0.0}
    assert len(ds.warnings) == 1


def test_generate_labeled_samples_starvation_silencable():
    sched = make_linear_schedule(20)

    class NeverAnything(ZeroNoiseModel):
        def classify(self, x, t=None):
            out = super().classify(x, t)
            logits = torch.full_like(out.logits, -1e9)
            logits[:, 0] = 0.0
            return type(out)(logits=logits, penultimate=logits, pooled=logits)

    with warnings_module.catch_warnings():
        warnings_module.simplefilter("error")
        ds = generate_labeled_samples(
            NeverAnything(num_classes=4), sched, [2], 3, ddim_steps=4, batch_size=4,
            max_attempts=2, generator=torch_generator(2), warn=False,
        )
    assert len(ds) == 0
    assert ds.warnings  # still recorded on the dataset


def test_generate_labeled_samples_leaves_model_unchanged():
    model = ZeroNoiseModel(num_classes=4)
    before = param_hash(model)
    generate_labeled_samples(model, make_linear_schedule(10), [0, 1], 3, ddim_steps=3,
                             batch_size=8, generator=torch_generator(3))
    assert param_hash(model) == before


def test_generate_labeled_samples_external_classifier_labels():
    """A separate classifier can label the generator's unconditional samples."""
    generator_model = ZeroNoiseModel(num_classes=4)

    class AlwaysTwo(ZeroNoiseModel):
        def classify(self, x, t=None):
            out = super().classify(x, t)
            logits = torch.full_like(out.logits, -1e9)
            logits[:, 2] = 0.0
            return type(out)(logits=logits, penultimate=logits, pooled=logits)

    ds = generate_labeled_samples(
        generator_model, make_linear_schedule(10), [2], 4, ddim_steps=3, batch_size=8,
        generator=torch_generator(4), classifier=AlwaysTwo(num_classes=4),
    )
    assert ds.class_counts() == {2: 4}


def test_merge_rehearsal_with_empty_is_identity():
    ds = _dataset(task_range=(1, 1))
    empty = empty_synthetic_dataset((1, 2, 2))
    merged = merge_rehearsal(empty, ds)
    assert torch.equal(merged.images, ds.images)
    assert merged.class_set == ds.class_set
    merged2 = merge_rehearsal(ds, empty)
    assert torch.equal(merged2.images, ds.images)


def test_merge_rehearsal_concatenates_disjoint_ranges():
    old = _dataset(n=4, classes=(0, 1), task_range=(1, 2), quota=8)
    new = SyntheticDataset(
        images=torch.zeros(2, 1, 2, 2), labels=torch.tensor([4, 5]),
        class_set=(4, 5), source_task_range=(3, 3), per_class_quota=6,
        provenance=("local", "local"),
    )
    merged = merge_rehearsal(old, new)
    merged.validate()
    assert len(merged) == 6
    assert merged.class_set == (0, 1, 4, 5)
    assert merged.source_task_range == (1, 3)
    assert merged.per_class_quota == 8  # max of the two quotas
    assert merged.provenance == old.provenance + new.provenance


def test_merge_rehearsal_rejects_overlapping_task_ranges():
    a = _dataset(task_range=(1, 2))
    b = _dataset(classes=(2, 3), task_range=(2, 3))
    b = SyntheticDataset(
        images=b.images, labels=torch.tensor([2, 3, 2, 3]), class_set=(2, 3),
        source_task_range=(2, 3), per_class_quota=8, provenance=b.provenance,
    )
    with pytest.raises(ValueError):
        merge_rehearsal(a, b)
