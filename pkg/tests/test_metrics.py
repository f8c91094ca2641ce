import numpy as np
import pytest
import torch

from stagegan.generator import LatentLayout
from stagegan.metrics import (AttributeAccuracy, FeatureSet, MetricReport,
                              attribute_control_accuracy, chamfer,
                              chamfer_embedding_distance, evaluate_generator,
                              fid, inception_score, make_generate_fn)


class TestFid:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(0)
        a = FeatureSet(rng.normal(size=(200, 8)))
        assert fid(a, a) <= 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a = FeatureSet(rng.normal(size=(300, 6)))
        b = FeatureSet(rng.normal(loc=0.5, size=(300, 6)))
        assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-6)

    def test_gaussian_mean_shift_analytic(self):
        """Same covariance, mean shifted by m: FID = ||m||^2 (here 16)."""
        rng = np.random.default_rng(2)
        a = rng.normal(size=(10_000, 16))
        b = rng.normal(size=(10_000, 16)) + 1.0
        value = fid(FeatureSet(a), FeatureSet(b))
        assert value == pytest.approx(16.0, rel=0.02)

    def test_gaussian_scale_change_analytic(self):
        """N(0, I) vs N(0, 4I) in 16 dims: FID = sum (sigma1 - sigma2)^2 = 16."""
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10_000, 16))
        b = 2.0 * rng.normal(size=(10_000, 16))
        value = fid(FeatureSet(a), FeatureSet(b))
        assert value == pytest.approx(16.0, rel=0.05)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError):
            fid(FeatureSet(rng.normal(size=(10, 4))),
                FeatureSet(rng.normal(size=(10, 5))))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            fid(FeatureSet(np.zeros((1, 4))), FeatureSet(np.zeros((5, 4))))

    def test_feature_set_validation(self):
        with pytest.raises(ValueError):
            FeatureSet(np.zeros(5))
        with pytest.raises(ValueError):
            FeatureSet(np.array([[1.0, np.nan]]))


class TestInceptionScore:
    def test_uniform_posteriors_give_one(self):
        probs = np.full((100, 4), 0.25)
        mean, std = inception_score(probs, splits=10)
        assert mean == 1.0
        assert std == 0.0

    def test_confident_uniform_classes_give_k(self):
        """One-hot rows cycling through K classes: score = K per split."""
        for k, n in ((3, 120), (4, 120)):
            probs = np.tile(np.eye(k), (n // k, 1))
            mean, std = inception_score(probs, splits=10)
            assert mean == pytest.approx(float(k), abs=1e-9)
            assert std == pytest.approx(0.0, abs=1e-9)

    def test_zero_entries_follow_convention(self):
        """0 * log 0 = 0: hard one-hot rows must not produce NaN."""
        probs = np.array([[1.0, 0.0], [1.0, 0.0]])
        mean, std = inception_score(probs, splits=1)
        assert np.isfinite(mean)
        assert mean == pytest.approx(1.0, abs=1e-12)

    def test_between_one_and_k(self):
        rng = np.random.default_rng(5)
        raw = rng.uniform(size=(200, 5))
        probs = raw / raw.sum(axis=1, keepdims=True)
        mean, _ = inception_score(probs, splits=4)
        assert 1.0 - 1e-9 <= mean <= 5.0 + 1e-9

    def test_more_splits_than_samples(self):
        probs = np.full((3, 2), 0.5)
        mean, _ = inception_score(probs, splits=10)
        assert mean == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            inception_score(np.full((4, 3), 0.5))  # rows sum to 1.5
        with pytest.raises(ValueError):
            inception_score(np.full((4, 2), 0.5), splits=0)
        with pytest.raises(ValueError):
            inception_score(np.array([0.5, 0.5]))


def _brute_chamfer(a, b):
    fwd = np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a])
    bwd = np.mean([min(np.sum((p - q) ** 2) for p in a) for q in b])
    return fwd + bwd


class TestChamfer:
    def test_single_point_pair(self):
        """{origin} vs {(1,0,0)}: 1 + 1 = 2."""
        assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == 2.0

    def test_identical_sets_zero(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(30, 3))
        assert chamfer(a, a) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, m = rng.integers(2, 51, size=2)
            a = rng.normal(size=(n, 3))
            b = rng.normal(size=(m, 3))
            assert chamfer(a, b) == pytest.approx(_brute_chamfer(a, b), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(15, 3))
        b = rng.normal(size=(25, 3))
        assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((5, 3)), np.zeros((5, 2)))


class TestChamferEmbedding:
    def test_rejects_small_sets(self, tiny_encoder):
        imgs = torch.zeros(5, 3, 32, 32)
        with pytest.raises(ValueError):
            chamfer_embedding_distance(imgs, imgs, tiny_encoder)

    def test_finite_and_deterministic(self, tiny_data, tiny_encoder):
        real, _ = tiny_data.batch(tiny_data.splits["val"][:16])
        fake, _ = tiny_data.batch(tiny_data.splits["train"][:16])
        a = chamfer_embedding_distance(real, fake, tiny_encoder, max_iter=300, seed=3)
        b = chamfer_embedding_distance(real, fake, tiny_encoder, max_iter=300, seed=3)
        assert np.isfinite(a.value) and a.value >= 0.0
        assert a.value == pytest.approx(b.value, abs=1e-9)
        assert a.converged


class _StubEncoder:
    """Channel means as the 'embedding' — enough to decode the stub images."""

    def encode(self, images):
        return images.mean(dim=(2, 3))


class _StubClassifier:
    def __init__(self, label_kind="categorical", num_classes=3):
        self.label_kind = label_kind
        self.num_classes = num_classes

    def classify(self, e):
        if self.label_kind == "categorical":
            return torch.softmax(5.0 * e, dim=1)
        return torch.sigmoid(5.0 * e)

    def features(self, e):
        return e


def _label_encoding_generate_fn(y, z):
    """Images whose channel y is +1 and the rest -1 (multi-hot for 2D labels)."""
    if y.ndim == 1:
        hot = torch.nn.functional.one_hot(y.long(), 3).float()
    else:
        hot = y.float()
    return (2.0 * hot - 1.0).view(y.shape[0], -1, 1, 1).expand(-1, -1, 4, 4)


def _label_ignoring_generate_fn(y, z):
    """Encoded class depends on the latent only, never on the label."""
    cls_idx = z.base_noise[:, :3].argmax(dim=1)
    return _label_encoding_generate_fn(cls_idx, z)


class TestAttributeControlAccuracy:
    def test_perfect_conditioning_scores_100(self):
        labels = torch.arange(3).repeat(20)
        acc = attribute_control_accuracy(
            _label_encoding_generate_fn, LatentLayout((4,), 8),
            _StubEncoder(), _StubClassifier(), labels, seed=0,
            attribute_names=["a", "b", "c"])
        assert acc.overall == 100.0
        assert acc.per_attribute == {"a": 100.0, "b": 100.0, "c": 100.0}
        assert acc.samples == 60

    def test_label_ignoring_generator_near_chance(self):
        labels = torch.arange(3).repeat(1000)
        acc = attribute_control_accuracy(
            _label_ignoring_generate_fn, LatentLayout((4,), 8),
            _StubEncoder(), _StubClassifier(), labels, seed=1)
        assert acc.overall == pytest.approx(100.0 / 3.0, abs=5.0)

    def test_multilabel_thresholding(self):
        labels = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        acc = attribute_control_accuracy(
            _label_encoding_generate_fn, LatentLayout((4,), 8),
            _StubEncoder(), _StubClassifier("multilabel", 2), labels, seed=2,
            attribute_names=["x", "y"])
        assert acc.overall == 100.0
        assert set(acc.per_attribute) == {"x", "y"}

    def test_deterministic_given_seed(self):
        labels = torch.arange(3).repeat(10)
        kwargs = dict(seed=7)
        a = attribute_control_accuracy(_label_ignoring_generate_fn,
                                       LatentLayout((4,), 8), _StubEncoder(),
                                       _StubClassifier(), labels, **kwargs)
        b = attribute_control_accuracy(_label_ignoring_generate_fn,
                                       LatentLayout((4,), 8), _StubEncoder(),
                                       _StubClassifier(), labels, **kwargs)
        assert a.overall == b.overall


class TestMetricReport:
    def test_validate_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MetricReport(fid=-1.0).validate()
        with pytest.raises(ValueError):
            MetricReport(is_mean=0.5).validate()
        with pytest.raises(ValueError):
            MetricReport(chamfer=-0.1).validate()
        with pytest.raises(ValueError):
            MetricReport(attr_acc=150.0).validate()

    def test_valid_report_passes(self):
        MetricReport(fid=3.2, is_mean=2.0, is_std=0.1, chamfer=5.0,
                     attr_acc=92.0).validate()

    def test_dict_round_trip(self):
        report = MetricReport(fid=1.0, is_mean=2.0, is_std=0.0, chamfer=3.0,
                              attr_acc=90.0, attr_acc_per_attribute={"a": 90.0},
                              real_samples=10, fake_samples=10, config={"k": 1})
        assert MetricReport.from_dict(report.to_dict()) == report


class TestEvaluateGenerator:
    def test_full_sweep_on_tiny_pipeline(self, tiny_data, tiny_encoder,
                                         tiny_classifier, tiny_gan):
        real, real_y = tiny_data.batch(tiny_data.splits["val"])
        report = evaluate_generator(
            make_generate_fn(tiny_gan.mapper, tiny_gan.generator),
            tiny_gan.layout(), tiny_encoder, tiny_classifier, real, real_y,
            n_fake=32, seed=0, with_chamfer=False,
            config_echo={"run": "tiny"})
        report.validate()
        assert report.fake_samples == 32
        assert report.real_samples == real.shape[0]
        assert report.fid >= 0.0
        assert report.is_mean >= 1.0 - 1e-9
        assert 0.0 <= report.attr_acc <= 100.0
        assert report.config == {"run": "tiny"}
        assert len(report.attr_acc_per_attribute) == 3
