import struct

import numpy as np
import pytest

from adextract import formats
from adextract.backbone import StubTextEncoder, StubVisionBackbone, load_backbone
from adextract.cli import main
from adextract.errors import ConfigError, InputError
from adextract.extract import (
    ExtractSpec,
    extract_features,
    extract_textbank,
    load_mask,
    render_prompts,
)


def read_bundle_header(path):
    data = path.read_bytes()
    assert data[:4] == b"ADF3"
    fields = struct.unpack_from("<IIIIIIIB", data, 4)
    names = ("version", "image_h", "image_w", "grid_h", "grid_w",
             "n_layers", "d_v", "mask_present")
    return dict(zip(names, fields)), data


class TestStubBackbone:
    def test_geometry(self):
        vision, text = load_backbone("stub-vit-l16")
        assert vision.patch_size == 16
        assert vision.depth == 24
        assert vision.d_v == 1024
        assert text.d_t == 768

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        image = rng.random((64, 64, 3))
        a = StubVisionBackbone().patch_tokens(image, [6, 12])
        b = StubVisionBackbone().patch_tokens(image, [6, 12])
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[0], a[1])  # layers differ

    def test_token_shape(self):
        image = np.zeros((64, 64, 3))
        tokens = StubVisionBackbone().patch_tokens(image, [24])[0]
        assert tokens.shape == (16, 1024)

    def test_text_encoder_unit_norm_and_distinct(self):
        enc = StubTextEncoder()
        a = enc.encode("a photo of a flawless widget")
        b = enc.encode("a photo of a damaged widget")
        assert a.shape == (768,)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-6
        assert not np.array_equal(a, b)
        assert np.array_equal(a, enc.encode("a photo of a flawless widget"))

    def test_unknown_backbone(self):
        with pytest.raises(ConfigError):
            load_backbone("vit-g-14")


class TestSpecValidation:
    def test_resize_not_divisible(self, tmp_path):
        spec = ExtractSpec(image_dir=str(tmp_path), out_dir=str(tmp_path),
                           class_name="widget", resize=500)
        with pytest.raises(ConfigError):
            spec.validate(StubVisionBackbone())

    def test_layer_out_of_depth(self, tmp_path):
        spec = ExtractSpec(image_dir=str(tmp_path), out_dir=str(tmp_path),
                           class_name="widget", layers=(6, 30))
        with pytest.raises(ConfigError):
            spec.validate(StubVisionBackbone())

    def test_missing_image_dir(self, tmp_path):
        spec = ExtractSpec(image_dir=str(tmp_path / "nope"),
                           out_dir=str(tmp_path), class_name="widget")
        with pytest.raises(InputError):
            extract_features(spec, log=lambda *_: None)


class TestExtractFeatures:
    def test_bundles_and_manifest(self, image_tree, tmp_path):
        images, masks = image_tree
        out = tmp_path / "out"
        spec = ExtractSpec(image_dir=str(images), mask_dir=str(masks),
                           out_dir=str(out), class_name="widget",
                           resize=64, layers=(6, 12))
        written = extract_features(spec, log=lambda *_: None)
        assert sorted(written) == [
            "test_0000.adft", "test_0001.adft",
            "train_0000.adft", "train_0001.adft",
        ]
        header, _ = read_bundle_header(out / "train_0000.adft")
        assert header["image_h"] == header["image_w"] == 64
        assert header["grid_h"] == header["grid_w"] == 4
        assert header["n_layers"] == 2
        assert header["d_v"] == 1024
        assert header["mask_present"] == 0  # train has no masks
        header, _ = read_bundle_header(out / "test_0000.adft")
        assert header["mask_present"] == 1
        manifest = (out / "manifest.tsv").read_text().splitlines()
        assert manifest[0] == "test\twidget\ttest_0000.adft"
        assert len(manifest) == 4
        assert not list(out.glob("*.tmp"))

    def test_deterministic_bytes(self, image_tree, tmp_path):
        images, masks = image_tree
        spec = dict(mask_dir=str(masks), class_name="widget",
                    resize=64, layers=(6, 12))
        extract_features(ExtractSpec(image_dir=str(images),
                                     out_dir=str(tmp_path / "a"), **spec),
                         log=lambda *_: None)
        extract_features(ExtractSpec(image_dir=str(images),
                                     out_dir=str(tmp_path / "b"), **spec),
                         log=lambda *_: None)
        for name in ("train_0000.adft", "test_0001.adft", "manifest.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_mask_binarization_threshold(self, tmp_path):
        from PIL import Image
        pixels = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        Image.fromarray(pixels, "L").save(tmp_path / "m.png")
        mask = load_mask(tmp_path / "m.png", 2)
        assert mask.tolist() == [[0, 0], [1, 1]]

    def test_mask_bytes_are_0_or_255(self, image_tree, tmp_path):
        images, masks = image_tree
        out = tmp_path / "out"
        spec = ExtractSpec(image_dir=str(images), mask_dir=str(masks),
                           out_dir=str(out), class_name="widget",
                           resize=64, layers=(6,))
        extract_features(spec, log=lambda *_: None)
        header, data = read_bundle_header(out / "test_0000.adft")
        mask = np.frombuffer(data[-64 * 64:], dtype=np.uint8)
        assert set(np.unique(mask)) <= {0, 255}
        assert header["mask_present"] == 1


class TestExtractTextbank:
    def test_substitution(self):
        prompts = render_prompts(("a [state] [class]",), "flawless", "cable")
        assert prompts == ["a flawless cable"]

    def test_empty_templates(self, tmp_path):
        spec = ExtractSpec(image_dir=".", out_dir=str(tmp_path),
                           class_name="widget", normal_templates=())
        with pytest.raises(ConfigError):
            extract_textbank(spec, log=lambda *_: None)

    def test_header_and_pooled_rows(self, tmp_path):
        spec = ExtractSpec(image_dir=".", out_dir=str(tmp_path),
                           class_name="widget")
        path = extract_textbank(spec, log=lambda *_: None)
        data = open(path, "rb").read()
        assert data[:4] == b"ADTX"
        version, d_t, templates = struct.unpack_from("<III", data, 4)
        assert (version, d_t, templates) == (1, 768, 2)
        floats = np.frombuffer(data[16:], dtype="<f4")
        assert floats.size == 2 * templates * d_t + 2 * d_t
        pooled = floats[-2 * d_t:].reshape(2, d_t).astype(np.float64)
        norms = np.linalg.norm(pooled, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_single_template_pooled_is_embedding(self, tmp_path):
        spec = ExtractSpec(image_dir=".", out_dir=str(tmp_path),
                           class_name="widget",
                           normal_templates=("a [state] [class]",),
                           abnormal_templates=("a broken [class]",))
        path = extract_textbank(spec, log=lambda *_: None)
        data = open(path, "rb").read()
        _, d_t, templates = struct.unpack_from("<III", data, 4)
        floats = np.frombuffer(data[16:], dtype="<f4")
        normal = floats[:d_t]
        pooled_normal = floats[-2 * d_t:-d_t]
        # embeddings are unit norm already, so pooling a single row keeps it
        assert np.allclose(normal, pooled_normal, atol=1e-6)

    def test_deterministic(self, tmp_path):
        spec = ExtractSpec(image_dir=".", out_dir=str(tmp_path),
                           class_name="widget")
        a = extract_textbank(spec, out_path=tmp_path / "a.adtx",
                             log=lambda *_: None)
        b = extract_textbank(spec, out_path=tmp_path / "b.adtx",
                             log=lambda *_: None)
        assert open(a, "rb").read() == open(b, "rb").read()


class TestCli:
    def test_features_and_textbank(self, image_tree, tmp_path, capsys):
        images, masks = image_tree
        out = tmp_path / "out"
        assert main([
            "features", "--images", str(images), "--masks", str(masks),
            "--out", str(out), "--resize", "64", "--layers", "6", "12",
            "--class-name", "widget",
        ]) == 0
        assert (out / "manifest.tsv").exists()
        assert main([
            "textbank", "--out", str(out / "textbank.adtx"),
            "--class-name", "widget",
            "--normal-template", "a photo of a [state] [class]",
            "--abnormal-template", "a photo of a [state] [class]",
        ]) == 0
        assert (out / "textbank.adtx").exists()

    def test_config_error_exit_code(self, image_tree, tmp_path, capsys):
        images, _ = image_tree
        code = main([
            "features", "--images", str(images), "--out", str(tmp_path / "o"),
            "--resize", "100", "--class-name", "widget",
        ])
        assert code == 2
        assert "CONFIG" in capsys.readouterr().err
