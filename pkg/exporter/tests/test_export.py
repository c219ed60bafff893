import json

import numpy as np
import pytest

from mvexport import ExportError, ExportJob, export
from mvexport.cli import main as cli_main

from conftest import write_view


def make_job(toy_images, toy_vision_model, toy_clip_model, out,
             with_text=True, **kw):
    images, labels = toy_images
    return ExportJob(
        images_root=str(images),
        labels_file=str(labels),
        vision_model=toy_vision_model,
        text_model=toy_clip_model if with_text else "",
        out_dir=str(out),
        batch_size=4,
        **kw,
    )


class TestExport:
    def test_blob_shapes_and_index(self, toy_images, toy_vision_model,
                                   toy_clip_model, tmp_path):
        out = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                              tmp_path / "ds"))
        index = json.loads((out / "index.json").read_text())
        assert index["num_objects"] == 2
        assert index["views_per_object"] == 3
        assert index["dino_dim"] == 32
        assert index["clip_dim"] == 16
        dino = np.frombuffer((out / "dino.f32le").read_bytes(), dtype="<f4")
        assert dino.size == 2 * 3 * 32
        text = np.frombuffer((out / "text.f32le").read_bytes(), dtype="<f4")
        assert text.size == 1 * 16  # one label row, no lexicon

    def test_validates_in_primary_loader_with_zero_violations(
            self, toy_images, toy_vision_model, toy_clip_model, tmp_path):
        out = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                              tmp_path / "ds"))
        from mvadapt import load_dataset, validate_manifest
        ds = load_dataset(out)  # load_dataset itself raises on any violation
        raws = {name: (out / info.file).read_bytes()
                for name, info in ds.manifest.blobs.items()}
        assert validate_manifest(ds.manifest, raws) == []

    def test_end_to_end_baseline_evaluation(self, toy_images, toy_vision_model,
                                            toy_clip_model, tmp_path):
        out = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                              tmp_path / "ds"))
        from mvadapt.cli import dispatch
        run_dir = tmp_path / "base"
        assert dispatch(["baseline", "--data", str(out),
                         "--out", str(run_dir)]) == 0
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert metrics["num_queries"] == 1
        assert 0.0 <= metrics["map"] <= 1.0

    def test_rerun_gives_identical_checksums(self, toy_images, toy_vision_model,
                                             toy_clip_model, tmp_path):
        a = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                            tmp_path / "a"))
        b = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                            tmp_path / "b"))
        assert (a / "index.json").read_bytes() == (b / "index.json").read_bytes()
        for name in ("dino.f32le", "clip_visual.f32le", "text.f32le"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_dino_only_export(self, toy_images, toy_vision_model,
                              toy_clip_model, tmp_path):
        out = export(make_job(toy_images, toy_vision_model, toy_clip_model,
                              tmp_path / "ds", with_text=False))
        index = json.loads((out / "index.json").read_text())
        assert set(index["blobs"]) == {"dino"}
        from mvadapt import load_dataset
        ds = load_dataset(out)
        assert ds.clip is None and ds.text is None

    def test_prompt_template_applied(self, toy_images, toy_vision_model,
                                     toy_clip_model, tmp_path, monkeypatch):
        captured = {}
        import importlib
        mod = importlib.import_module("mvexport.export")
        orig = mod._embed_prompts

        def spy(labels, model, tokenizer, prompt, device):
            captured["texts"] = [prompt.format(label=n) for n in labels]
            return orig(labels, model, tokenizer, prompt, device)

        monkeypatch.setattr(mod, "_embed_prompts", spy)
        export(make_job(toy_images, toy_vision_model, toy_clip_model,
                        tmp_path / "ds"))
        assert captured["texts"] == ["a photo of chair"]


class TestAborts:
    def test_mismatched_view_counts(self, toy_images, toy_vision_model,
                                    toy_clip_model, tmp_path):
        images, _ = toy_images
        write_view(images / "obj_a" / "view_99.png", seed=99)
        with pytest.raises(ExportError, match="view count"):
            export(make_job(toy_images, toy_vision_model, toy_clip_model,
                            tmp_path / "ds"))
        assert not (tmp_path / "ds").exists()

    def test_undecodable_image_names_path(self, toy_images, toy_vision_model,
                                          toy_clip_model, tmp_path):
        images, _ = toy_images
        bad = images / "obj_b" / "view_01.png"
        bad.write_bytes(b"this is not an image")
        with pytest.raises(ExportError, match="view_01.png"):
            export(make_job(toy_images, toy_vision_model, toy_clip_model,
                            tmp_path / "ds"))
        assert not (tmp_path / "ds").exists()

    def test_missing_labels(self, toy_images, toy_vision_model,
                            toy_clip_model, tmp_path):
        images, labels = toy_images
        labels.write_text("obj_a,chair,query\n")
        with pytest.raises(ExportError, match="obj_b"):
            export(make_job(toy_images, toy_vision_model, toy_clip_model,
                            tmp_path / "ds"))

    def test_bad_labels_row(self, toy_images, toy_vision_model,
                            toy_clip_model, tmp_path):
        images, labels = toy_images
        labels.write_text("obj_a,chair,flight\nobj_b,chair,target\n")
        with pytest.raises(ExportError, match="bad labels row"):
            make_job(toy_images, toy_vision_model, toy_clip_model,
                     tmp_path / "ds")


class TestCli:
    def test_cli_round_trip(self, toy_images, toy_vision_model, toy_clip_model,
                            tmp_path, capsys):
        images, labels = toy_images
        code = cli_main([
            "--images", str(images), "--labels", str(labels),
            "--vision-model", toy_vision_model, "--text-model", toy_clip_model,
            "--prompt", "a photo of {label}", "--out", str(tmp_path / "ds"),
            "--batch-size", "2",
        ])
        assert code == 0
        assert (tmp_path / "ds" / "index.json").exists()

    def test_cli_error_exit_code(self, toy_images, toy_vision_model,
                                 toy_clip_model, tmp_path):
        images, labels = toy_images
        write_view(images / "obj_a" / "view_99.png", seed=1)
        code = cli_main([
            "--images", str(images), "--labels", str(labels),
            "--vision-model", toy_vision_model, "--out", str(tmp_path / "ds"),
        ])
        assert code == 1
