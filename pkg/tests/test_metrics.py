import numpy as np
import pytest

from adhead import feature_io, metrics, training
from adhead.config import TrainConfig
from adhead.errors import MetricUndefinedError, ValidationError
from oracles import exhaustive_max_f1, pair_count_auroc


class TestPixelAuroc:
    def test_perfect_separation(self):
        assert metrics.pixel_auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_known_value(self):
        value = metrics.pixel_auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert value == pytest.approx(0.75)

    def test_all_ties(self):
        assert metrics.pixel_auroc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(MetricUndefinedError):
            metrics.pixel_auroc([0.1, 0.2], [1, 1])

    def test_pair_counting_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(5, 200))
            # coarse quantization forces plenty of ties
            scores = np.round(rng.random(n), 1)
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            got = metrics.pixel_auroc(scores, labels)
            expected = pair_count_auroc(scores.tolist(), labels.tolist())
            assert got == pytest.approx(expected, abs=1e-12)


class TestMaxF1:
    def test_perfect(self):
        assert metrics.max_f1([0.1, 0.9], [0, 1]) == 1.0

    def test_known_value(self):
        assert metrics.max_f1([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(0.8)

    def test_all_positive(self):
        assert metrics.max_f1([0.3, 0.5, 0.2], [1, 1, 1]) == 1.0

    def test_no_positives(self):
        with pytest.raises(MetricUndefinedError):
            metrics.max_f1([0.3, 0.5], [0, 0])

    def test_exhaustive_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 60))
            scores = np.round(rng.random(n), 1)
            labels = (rng.random(n) < 0.4).astype(int)
            if labels.sum() == 0:
                labels[0] = 1
            got = metrics.max_f1(scores, labels)
            expected = exhaustive_max_f1(scores.tolist(), labels.tolist())
            assert got == pytest.approx(expected, abs=1e-12)


class TestMonotoneInvariance:
    def test_both_metrics(self, rng):
        scores = rng.random(300)
        labels = (rng.random(300) < 0.3).astype(int)
        labels[:2] = [0, 1]
        base_auroc = metrics.pixel_auroc(scores, labels)
        base_f1 = metrics.max_f1(scores, labels)
        for transform in (lambda x: x ** 3, lambda x: 1 / (1 + np.exp(-5 * x))):
            t = transform(scores)
            assert metrics.pixel_auroc(t, labels) == pytest.approx(base_auroc, abs=1e-12)
            assert metrics.max_f1(t, labels) == pytest.approx(base_f1, abs=1e-12)


class TestEvaluate:
    @pytest.fixture
    def trained(self, tmp_path):
        spec = feature_io.SynthSpec(n_train=8, n_test=6, n_layers=2, grid=4,
                                    image_size=16, d_v=8, d_t=6, seed=2)
        manifest = feature_io.synth_dataset(spec, tmp_path)
        bank = feature_io.read_textbank(tmp_path / "textbank.adtx")
        cfg = TrainConfig(layer_indices=(1, 2), d_e=5, epochs=4, batch_size=4,
                          learning_rate=3e-3, seed=0)
        stack, _ = training.train(manifest, bank, cfg)
        return manifest, stack, bank, cfg

    def test_report_fields(self, trained):
        manifest, stack, bank, cfg = trained
        report = metrics.evaluate(manifest, stack, bank, cfg)
        assert 0.0 <= report.pixel_auroc <= 1.0
        assert 0.0 <= report.max_f1 <= 1.0
        assert report.n_images == 6
        assert report.n_pixels == 6 * 16 * 16
        assert len(report.per_image) == 6
        lines = report.kv_lines()
        assert lines[0].startswith("pixel_auroc=")
        assert any(l.startswith("image_auroc\t") for l in lines)

    def test_order_invariance(self, trained):
        manifest, stack, bank, cfg = trained
        report = metrics.evaluate(manifest, stack, bank, cfg)
        shuffled = feature_io.DatasetManifest(
            entries=list(reversed(manifest.entries)), root=manifest.root
        )
        report2 = metrics.evaluate(shuffled, stack, bank, cfg)
        assert report2.pixel_auroc == report.pixel_auroc
        assert report2.max_f1 == report.max_f1

    def test_perfect_single_image(self, tmp_path, rng):
        from head_testutil import make_bundle
        bundle = make_bundle(rng, grid=4, image=4, d_v=3, layers=(1,))
        # make the final-layer channel-mean reproduce the mask exactly
        mask = bundle.mask[:4, :4]
        bundle.mask = mask
        bundle.patch_tokens[0] = np.where(
            mask.reshape(-1, 1).astype(bool), [3.0, 4.0, 0.0], [1.0, 0.0, 0.0]
        ).astype(np.float64)
        feature_io.write_bundle(bundle, tmp_path / "one.adft")
        manifest = feature_io.DatasetManifest(
            entries=[feature_io.ManifestEntry("test", "c", "one.adft")],
            root=str(tmp_path),
        )
        report = metrics.evaluate(manifest, None, None, None, baseline=True)
        assert report.pixel_auroc == 1.0
        assert report.max_f1 == 1.0

    def test_empty_split(self, trained):
        manifest, stack, bank, cfg = trained
        empty = feature_io.DatasetManifest(entries=[], root=manifest.root)
        with pytest.raises(ValidationError):
            metrics.evaluate(empty, stack, bank, cfg)

    def test_baseline_vs_trained(self, trained):
        manifest, stack, bank, cfg = trained
        trained_report = metrics.evaluate(manifest, stack, bank, cfg)
        baseline_report = metrics.evaluate(manifest, None, bank, cfg, baseline=True)
        assert trained_report.pixel_auroc > baseline_report.pixel_auroc
