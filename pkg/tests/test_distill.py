"""Both training stages on small synthetic inputs."""

import numpy as np
import pytest

from bridgedistill import autodiff as ad
from bridgedistill.autodiff import Tensor
from bridgedistill.distill import (
    AdapterBatch,
    DistillConfig,
    StageError,
    StudentData,
    TeacherEnsemble,
    adapter_objective,
    expand_degraded,
    finetune_softmax,
    make_soft_targets,
    pretrain_student,
    regression_targets,
    student_objective,
    train_adapter,
    train_mixed_classifier,
    train_student,
)
from bridgedistill.models import build_adapter, build_student, build_toy_teacher, head_spec, Network


class FeatureTeacher:
    """Stands in for a pretrained teacher when only f_t(I) matters."""

    def __init__(self, private_ids=range(5)):
        self.name = "teacherF"
        self.private_ids = tuple(private_ids)
        self.ft_head = None
        self.public_ids = ()


@pytest.fixture
def public():
    """Clustered 32-d 'teacher features' for 6 public identities (ids 10..15)."""
    rng = np.random.default_rng(7)
    centres = rng.standard_normal((6, 32)) * 2
    ids = np.repeat(np.arange(10, 16), 12)
    feats = (centres[ids - 10] + 0.5 * rng.standard_normal((len(ids), 32))).astype(np.float32)
    return feats, ids


@pytest.fixture
def cfg():
    return DistillConfig(epochs_adapter=15, epochs_head=15, batch_size=16, epochs_pretrain=1, epochs_main=2,
                         lr=0.01, seed=3)


@pytest.fixture
def tuned_teacher(public, cfg):
    t = FeatureTeacher()
    finetune_softmax(t, *public, cfg)
    return t


def ce_direct(logits, targets, T=1.0):
    z = logits / T
    z = z - z.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    return float(-(targets * logp).sum(1).mean())


class TestConfig:
    def test_defaults(self):
        c = DistillConfig()
        assert (c.lam, c.temperature, c.batch_size, c.lr) == (1.0, 4.0, 32, 0.001)

    @pytest.mark.parametrize("kw", [dict(lam=-1), dict(temperature=0), dict(mode="x"), dict(teacher_set="Q"),
                                    dict(mode="sc", teacher_set="O"), dict(soft_targets="other")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DistillConfig(**kw)

    def test_mode_c_without_teacher_is_allowed(self):
        assert DistillConfig(mode="c", teacher_set="O").teacher_set == "O"


class TestStageOne:
    def test_soft_targets_need_finetuned_head(self, public):
        with pytest.raises(StageError):
            make_soft_targets(FeatureTeacher(), public[0], 4.0)

    def test_soft_targets_are_distributions(self, tuned_teacher, public):
        soft = make_soft_targets(tuned_teacher, public[0], 4.0)
        np.testing.assert_allclose(soft.sum(1), 1.0, atol=1e-12)
        hard = make_soft_targets(tuned_teacher, public[0], 1.0)
        np.testing.assert_array_equal(soft.argmax(1), hard.argmax(1))
        flat = make_soft_targets(tuned_teacher, public[0], 1e7)
        np.testing.assert_allclose(flat, 1 / 6, atol=1e-5)

    def test_objective_is_sum_of_terms(self, tuned_teacher, public):
        feats, ids = public
        adapter = build_adapter(32, 6, seed=0, dtype=np.float64)
        batch = AdapterBatch(feats[:20].astype(np.float64), ids[:20] - 10, make_soft_targets(tuned_teacher, feats[:20], 4.0))
        for lam in (0.0, 0.5, 2.0):
            total, C, D = adapter_objective(adapter, batch, lam, 4.0)
            _, logits = adapter.forward(Tensor(batch.features))
            c_ref = ce_direct(logits.data, ad.one_hot(batch.labels, 6, np.float64))
            d_ref = ce_direct(logits.data, batch.soft, 4.0)
            assert abs(C.item() - c_ref) < 1e-10 and abs(D.item() - d_ref) < 1e-10
            assert abs(total.item() - (c_ref + lam * d_ref)) < 1e-10

    def test_lambda_zero_is_classification_only(self, tuned_teacher, public):
        feats, ids = public
        adapter = build_adapter(32, 6, seed=0)
        batch = AdapterBatch(feats[:8], ids[:8] - 10, make_soft_targets(tuned_teacher, feats[:8], 4.0))
        total, C, _ = adapter_objective(adapter, batch, 0.0, 4.0)
        assert total.item() == C.item()

    def test_lambda_monotone(self, tuned_teacher, public):
        feats, ids = public
        adapter = build_adapter(32, 6, seed=0, dtype=np.float64)
        batch = AdapterBatch(feats[:8].astype(np.float64), ids[:8] - 10,
                             make_soft_targets(tuned_teacher, feats[:8], 4.0))
        vals = [adapter_objective(adapter, batch, lam, 4.0)[0].item() for lam in (0.0, 0.5, 1.0, 3.0)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_literal_convention_scales_by_inverse_temperature(self, tuned_teacher, public):
        feats, ids = public
        adapter = build_adapter(32, 6, seed=0, dtype=np.float64)
        soft1 = make_soft_targets(tuned_teacher, feats[:8], 4.0, "literal")
        batch = AdapterBatch(feats[:8].astype(np.float64), ids[:8] - 10, soft1)
        _, _, D = adapter_objective(adapter, batch, 1.0, 4.0, "literal")
        _, logits = adapter.forward(Tensor(batch.features))
        assert abs(D.item() - ce_direct(logits.data, soft1) / 4.0) < 1e-10

    def test_matching_head_gives_entropy(self):
        # adapter logits equal to the teacher logits: D is the entropy of the softened targets
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((5, 4))
        soft = ad.softmax_t(Tensor(logits), 4.0).data
        D = ad.soft_cross_entropy(Tensor(logits), soft, 4.0).item()
        ent = float(-(soft * np.log(soft)).sum(1).mean())
        assert abs(D - ent) < 1e-6

    def test_training_lowers_objective_and_is_deterministic(self, tuned_teacher, public, cfg):
        a1, r1 = train_adapter(tuned_teacher, *public, cfg)
        a2, r2 = train_adapter(tuned_teacher, *public, cfg)
        assert len(r1.records) == cfg.epochs_adapter
        assert r1.records[-1].total < r1.records[0].total
        assert r1.losses() == r2.losses()
        assert a1.digest() == a2.digest()
        assert a1.features(Tensor(public[0][:2])).shape == (2, 128)

    def test_rejects_overlap_with_private(self, public, cfg):
        t = FeatureTeacher(private_ids=(10, 99))
        with pytest.raises(ValueError):
            train_adapter(t, *public, cfg.with_(lam=0.0))

    def test_distillation_needs_teacher(self, public, cfg):
        with pytest.raises(StageError):
            train_adapter(None, *public, cfg)

    def test_empty_public_set(self, tuned_teacher, cfg):
        with pytest.raises(ValueError):
            train_adapter(tuned_teacher, np.zeros((0, 32), np.float32), np.zeros(0, int), cfg)

    def test_mixed_classifier_label_space(self, public, cfg):
        feats, ids = public
        rng = np.random.default_rng(1)
        pf = rng.standard_normal((20, 32)).astype(np.float32)
        pid = np.repeat(np.arange(5), 4)
        acc, k = train_mixed_classifier(FeatureTeacher(), pf, pid, feats, ids, cfg, feats, ids)
        assert k == 11 and 0.0 <= acc <= 1.0
        with pytest.raises(ValueError):
            train_mixed_classifier(FeatureTeacher(), pf, pid + 10, feats, ids, cfg, feats, ids)

    def test_ensemble_uses_joint_head(self, public, cfg):
        a = build_toy_teacher(5, 16, seed=1, private_ids=range(5))
        b = build_toy_teacher(5, 16, seed=2, variant="C", private_ids=range(5))
        ens = TeacherEnsemble([a, b])
        assert ens.feature_dim == 32
        finetune_softmax(ens, *public, cfg)
        assert ens.ft_head.params["teacherE_ft.fc.weight"].shape == (6, 32)


@pytest.fixture
def lr_data():
    rng = np.random.default_rng(2)
    n, k = 24, 4
    labels = np.arange(n) % k
    base = rng.random((k, 1, 16, 16)).astype(np.float32)
    lr = np.stack([[base[l] + 0.05 * rng.standard_normal((1, 16, 16)).astype(np.float32) for _ in range(2)]
                   for l in labels])
    targets = rng.standard_normal((n, 128)).astype(np.float32)
    return expand_degraded(lr, labels, targets, k)


class TestStageTwo:
    def test_expand_repeats_labels_and_targets(self, lr_data):
        assert len(lr_data) == 48
        np.testing.assert_array_equal(lr_data.labels[:4], [0, 0, 1, 1])
        np.testing.assert_array_equal(lr_data.targets[0], lr_data.targets[1])

    def test_objective_terms_match_direct_formulas(self, lr_data):
        s = build_student(16, 4, seed=0, dtype=np.float64)
        x, y, t = lr_data.images[:6].astype(np.float64), lr_data.labels[:6], lr_data.targets[:6].astype(np.float64)
        total, C, R = student_objective(s, x, y, t, "sc")
        f, logits = s.forward(Tensor(x))
        c_ref = ce_direct(logits.data, ad.one_hot(y, 4, np.float64))
        r_ref = float(np.mean([np.sum((f.data[i] - t[i]) ** 2) for i in range(6)]))
        assert abs(C.item() - c_ref) < 1e-8 and abs(R.item() - r_ref) < 1e-8
        assert abs(total.item() - (C.item() + R.item())) < 1e-10

    def test_exact_targets_give_zero_regression(self, lr_data):
        s = build_student(16, 4, seed=0, dtype=np.float64)
        s.eval()
        x = lr_data.images[:4].astype(np.float64)
        feats = s.features(Tensor(x)).data
        _, _, R = student_objective(s, x, lr_data.labels[:4], feats, "s")
        assert R.item() == 0.0

    def test_mode_c_is_classification_only(self, lr_data):
        s = build_student(16, 4, seed=0)
        total, C, R = student_objective(s, lr_data.images[:4], lr_data.labels[:4], None, "c")
        assert R is None and total.item() == C.item()

    def test_dc_dimension_mismatch(self, lr_data):
        s = build_student(16, 4, seed=0, mimic_dim=256)
        with pytest.raises(ValueError):
            student_objective(s, lr_data.images[:4], lr_data.labels[:4], lr_data.targets[:4], "dc")

    def test_regression_modes_need_targets(self, lr_data):
        s = build_student(16, 4, seed=0)
        no_t = StudentData(lr_data.images, lr_data.labels, None, 4)
        with pytest.raises(StageError):
            train_student(s, no_t, DistillConfig(mode="sc"))

    def test_regression_targets_need_adapter(self):
        t = build_toy_teacher(5, 16, seed=1, private_ids=range(5))
        with pytest.raises(StageError):
            regression_targets(t, None, np.zeros((1, 1, 64, 64), np.float32), "sc")
        with pytest.raises(StageError):
            regression_targets(None, None, np.zeros((1, 1, 64, 64), np.float32), "dc")

    def test_pretrain_lowers_loss_and_zero_epochs_keeps_init(self, lr_data, cfg):
        s = build_student(16, 4, seed=0)
        init = s.digest()
        rep = pretrain_student(s, lr_data, cfg.with_(epochs_pretrain=0))
        assert rep.records == [] and s.digest() == init
        rep = pretrain_student(s, lr_data, cfg.with_(epochs_pretrain=4))
        assert rep.records[-1].C < rep.records[0].C

    def test_sc_training_lowers_total_and_is_deterministic(self, lr_data, cfg):
        runs = []
        for _ in range(2):
            s = build_student(16, 4, seed=1)
            rep = train_student(s, lr_data, cfg.with_(mode="sc", epochs_main=3, lr=0.001))
            runs.append((s.digest(), rep.losses()))
        assert runs[0] == runs[1]
        losses = runs[0][1]
        assert losses[-1][2] < losses[0][2]

    def test_supervision_changes_trajectory(self, lr_data, cfg):
        a, b = build_student(16, 4, seed=1), build_student(16, 4, seed=1)
        train_student(a, lr_data, cfg.with_(mode="c", teacher_set="O"))
        train_student(b, lr_data, cfg.with_(mode="sc"))
        assert a.digest() != b.digest()

    def test_mode_c_ignores_lambda_and_temperature(self, lr_data, cfg):
        reps = []
        for lam, T in ((0.0, 1.0), (3.0, 10.0)):
            s = build_student(16, 4, seed=1)
            reps.append(train_student(s, lr_data, cfg.with_(mode="c", teacher_set="O", lam=lam, temperature=T)).losses())
        assert reps[0] == reps[1]

    def test_teacher_and_adapter_stay_frozen(self):
        t = build_toy_teacher(5, 16, seed=1, private_ids=range(5))
        adapter = build_adapter(16, 3, seed=0)
        adapter.discard_head()
        rng = np.random.default_rng(0)
        hr = rng.random((6, 1, 64, 64)).astype(np.float32)
        before = (t.backbone_digest(), adapter.digest())
        targets = regression_targets(t, adapter, hr, "sc")
        lr = rng.random((6, 2, 1, 16, 16)).astype(np.float32)
        data = expand_degraded(lr, np.arange(6) % 3, targets, 3)
        s = build_student(16, 3, seed=0)
        train_student(s, data, DistillConfig(epochs_main=1, batch_size=4))
        assert (t.backbone_digest(), adapter.digest()) == before
