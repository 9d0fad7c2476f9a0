import math

import pytest
import torch

from diffreplay.distill import (
    TeacherRef,
    cl_loss,
    freeze_teacher,
    kd_classification_loss,
    kd_diffusion_loss,
    kd_joint_loss,
)
from diffreplay.model import classification_loss
from diffreplay.utils import param_hash, torch_generator
from helpers import FixedLogitClassifier, rand_images, small_schedule, tiny_model


class _TensorPair:
    """Duck-typed dataset for cl_loss: anything with .images and .labels."""

    def __init__(self, images, labels):
        self.images = images
        self.labels = labels


def test_freeze_teacher_snapshots_and_detaches():
    model = tiny_model(seed=0)
    teacher = freeze_teacher(model)
    assert isinstance(teacher, TeacherRef)
    assert all(not p.requires_grad for p in teacher.module.parameters())
    assert not teacher.module.training
    teacher.verify_frozen()
    # the snapshot is independent of the live model
    with torch.no_grad():
        next(model.parameters()).add_(1.0)
    teacher.verify_frozen()
    out = teacher.predict_noise(rand_images(2), torch.tensor([1, 2]))
    assert out.grad_fn is None


def test_verify_frozen_detects_tampering():
    teacher = freeze_teacher(tiny_model(seed=0))
    with torch.no_grad():
        next(teacher.module.parameters()).add_(0.5)
    with pytest.raises(RuntimeError):
        teacher.verify_frozen()


def test_kd_diffusion_loss_zero_for_exact_copy():
    model = tiny_model(seed=1)
    teacher = freeze_teacher(model)
    student = model.clone()
    loss = kd_diffusion_loss(student, teacher, rand_images(6), small_schedule(),
                             generator=torch_generator(7))
    assert float(loss.detach()) == 0.0  # shared noise draw makes this exact


def test_kd_diffusion_loss_positive_for_different_student():
    teacher = freeze_teacher(tiny_model(seed=1))
    student = tiny_model(seed=2)
    loss = kd_diffusion_loss(student, teacher, rand_images(6), small_schedule(),
                             generator=torch_generator(7))
    assert float(loss.detach()) > 0.0


def test_kd_classification_uniform_student_hand_value():
    # teacher probabilities [0.9, 0.1], student uniform: loss = ln 2 exactly
    teacher = FixedLogitClassifier(torch.tensor([0.9, 0.1]).log())
    student = FixedLogitClassifier(torch.zeros(2))
    loss = kd_classification_loss(student, teacher, torch.zeros(3, 1, 4, 4, dtype=torch.float64))
    assert math.isclose(float(loss), math.log(2.0), rel_tol=1e-12)


def test_kd_classification_copy_gives_teacher_entropy():
    logits = torch.tensor([0.3, -0.2, 1.1], dtype=torch.float64)
    probs = torch.softmax(logits, dim=0)
    entropy = float(-(probs * probs.log()).sum())
    loss = kd_classification_loss(
        FixedLogitClassifier(logits), FixedLogitClassifier(logits),
        torch.zeros(2, 1, 4, 4, dtype=torch.float64),
    )
    assert math.isclose(float(loss), entropy, rel_tol=1e-12)


def test_kd_classification_one_hot_teacher_equals_hard_ce():
    teacher = FixedLogitClassifier(torch.tensor([[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]))
    student_logits = torch.tensor([[0.2, -0.4, 1.0], [0.7, 0.1, -0.3]], dtype=torch.float64)
    student = FixedLogitClassifier(student_logits)
    x = torch.zeros(2, 1, 4, 4, dtype=torch.float64)
    soft = float(kd_classification_loss(student, teacher, x))
    hard = float(classification_loss(student_logits, torch.tensor([0, 2])))
    assert math.isclose(soft, hard, abs_tol=1e-8)


def test_kd_classification_matches_loop_oracle():
    gen = torch_generator(11)
    t_logits = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    s_logits = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    expected = 0.0
    for i in range(5):
        tp = torch.softmax(t_logits[i], dim=0)
        sp = torch.log_softmax(s_logits[i], dim=0)
        expected += float(-(tp * sp).sum())
    expected /= 5
    loss = kd_classification_loss(
        FixedLogitClassifier(s_logits), FixedLogitClassifier(t_logits),
        torch.zeros(5, 1, 4, 4, dtype=torch.float64),
    )
    assert math.isclose(float(loss), expected, rel_tol=1e-12)


def test_kd_joint_loss_composition():
    teacher = freeze_teacher(tiny_model(seed=3))
    student = tiny_model(seed=4)
    x = rand_images(5)
    sched = small_schedule()
    total = kd_joint_loss(student, teacher, x, sched, alpha_kd=0.25,
                          generator=torch_generator(2))
    diff = kd_diffusion_loss(student, teacher, x, sched, generator=torch_generator(2))
    cls = kd_classification_loss(student, teacher, x)
    assert math.isclose(float(total.detach()),
                        float(diff.detach()) + 0.25 * float(cls.detach()), rel_tol=1e-9)
    no_cls = kd_joint_loss(student, teacher, x, sched, alpha_kd=0.25,
                           generator=torch_generator(2), include_class_terms=False)
    assert math.isclose(float(no_cls.detach()), float(diff.detach()), rel_tol=1e-12)


def test_kd_gradients_flow_to_student_only():
    teacher = freeze_teacher(tiny_model(seed=5))
    student = tiny_model(seed=6)
    loss = kd_joint_loss(student, teacher, rand_images(4), small_schedule(),
                         alpha_kd=1.0, generator=torch_generator(1))
    loss.backward()
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in student.parameters())
    assert all(p.grad is None for p in teacher.module.parameters())


def test_kd_descent_reduces_loss():
    teacher = freeze_teacher(tiny_model(seed=7))
    student = tiny_model(seed=8)
    x = rand_images(8)
    sched = small_schedule()
    opt = torch.optim.SGD(student.parameters(), lr=0.05)
    losses = []
    for step in range(20):
        loss = kd_joint_loss(student, teacher, x, sched, alpha_kd=1.0,
                             generator=torch_generator(123))
        losses.append(float(loss.detach()))
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert losses[-1] < losses[0]


def test_cl_loss_beta_linearity():
    teacher_old = freeze_teacher(tiny_model(seed=1))
    teacher_new = freeze_teacher(tiny_model(seed=2))
    student = tiny_model(seed=3)
    s_old = _TensorPair(rand_images(12, seed=4), torch.arange(12) % 2)
    s_new = _TensorPair(rand_images(6, seed=5), torch.arange(6) % 2)
    sched = small_schedule()

    def value(beta):
        return float(cl_loss(
            student, teacher_old, teacher_new, s_old, s_new, sched,
            beta=beta, alpha=0.7, alpha_kd=0.5,
            generator=torch_generator(77), batch_size=8,
        ).detach())

    v1, v2, v3 = value(0.01), value(0.02), value(0.03)
    assert abs((v3 - v2) - (v2 - v1)) < 1e-6


def test_cl_loss_first_task_drops_old_teacher_term():
    teacher_new = freeze_teacher(tiny_model(seed=2))
    student = tiny_model(seed=3)
    s_new = _TensorPair(rand_images(6, seed=5), torch.arange(6) % 2)
    sizes = []

    def spy(batch):
        sizes.append(batch.shape[0])
        return batch

    loss = cl_loss(student, None, teacher_new, None, s_new, small_schedule(), beta=0.0,
                   alpha_kd=0.5, generator=torch_generator(3), batch_size=4, augment_fn=spy)
    assert sizes == [4]  # only the new-task kd term draws a minibatch
    assert float(loss.detach()) > 0.0


def test_cl_loss_minibatch_sizes_proportional_to_dataset_sizes():
    teacher_old = freeze_teacher(tiny_model(seed=1))
    teacher_new = freeze_teacher(tiny_model(seed=2))
    student = tiny_model(seed=3)
    s_old = _TensorPair(rand_images(30, seed=4), torch.arange(30) % 2)
    s_new = _TensorPair(rand_images(10, seed=5), torch.arange(10) % 2)
    sizes = []

    def spy(batch):
        sizes.append(batch.shape[0])
        return batch

    cl_loss(student, teacher_old, teacher_new, s_old, s_new, small_schedule(),
            beta=0.0, generator=torch_generator(0), batch_size=16, augment_fn=spy)
    assert sizes == [12, 4]  # 3:1 split of the batch, old first

    sizes.clear()
    cl_loss(student, teacher_old, teacher_new, s_old, s_new, small_schedule(),
            beta=0.01, generator=torch_generator(0), batch_size=16, augment_fn=spy)
    assert sizes == [12, 4, 16]  # plus one full union batch when beta > 0


def test_cl_loss_extreme_imbalance_keeps_both_terms():
    teacher_old = freeze_teacher(tiny_model(seed=1))
    teacher_new = freeze_teacher(tiny_model(seed=2))
    student = tiny_model(seed=3)
    s_old = _TensorPair(rand_images(1000, seed=4), torch.zeros(1000, dtype=torch.int64))
    s_new = _TensorPair(rand_images(2, seed=5), torch.zeros(2, dtype=torch.int64))
    sizes = []

    def spy(batch):
        sizes.append(batch.shape[0])
        return batch

    cl_loss(student, teacher_old, teacher_new, s_old, s_new, small_schedule(),
            beta=0.0, generator=torch_generator(0), batch_size=8, augment_fn=spy)
    assert sizes[0] + sizes[1] == 8
    assert sizes[1] >= 1  # the new-task term never starves


def test_cl_loss_rejects_empty_new_data():
    teacher = freeze_teacher(tiny_model(seed=1))
    student = tiny_model(seed=3)
    empty = _TensorPair(rand_images(0), torch.zeros(0, dtype=torch.int64))
    with pytest.raises(ValueError):
        cl_loss(student, None, teacher, None, empty, small_schedule(),
                generator=torch_generator(0))


def test_cl_loss_deterministic_given_generator():
    teacher_old = freeze_teacher(tiny_model(seed=1))
    teacher_new = freeze_teacher(tiny_model(seed=2))
    student = tiny_model(seed=3)
    s_old = _TensorPair(rand_images(8, seed=4), torch.arange(8) % 2)
    s_new = _TensorPair(rand_images(8, seed=5), torch.arange(8) % 2)
    vals = {
        float(cl_loss(student, teacher_old, teacher_new, s_old, s_new, small_schedule(),
                      generator=torch_generator(9), batch_size=4).detach())
        for _ in range(3)
    }
    assert len(vals) == 1
