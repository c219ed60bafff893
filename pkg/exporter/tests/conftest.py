"""Offline fixtures: tiny randomly initialized encoders and a toy image tree.

The models are real transformers classes saved to disk and reloaded through
the same auto-class machinery the exporter uses for published checkpoints;
only their size is toy.
"""
import json
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image


@pytest.fixture(scope="session")
def toy_vision_model(tmp_path_factory):
    from transformers import CLIPImageProcessor, Dinov2Config, Dinov2Model

    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("toy_vision")
    config = Dinov2Config(hidden_size=32, num_hidden_layers=2,
                          num_attention_heads=2, intermediate_size=64,
                          image_size=56, patch_size=14)
    Dinov2Model(config).save_pretrained(path)
    CLIPImageProcessor(size={"shortest_edge": 56},
                       crop_size={"height": 56, "width": 56}).save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def toy_clip_model(tmp_path_factory):
    from transformers import CLIPConfig, CLIPImageProcessor, CLIPModel, CLIPTokenizer

    torch.manual_seed(1)
    path = tmp_path_factory.mktemp("toy_clip")

    # character-level vocabulary: every lowercase word tokenizes cleanly
    vocab = {"<|startoftext|>": 0, "<|endoftext|>": 1}
    for ch in "abcdefghijklmnopqrstuvwxyz0123456789_":
        vocab[ch] = len(vocab)
    for ch in "abcdefghijklmnopqrstuvwxyz0123456789_":
        vocab[ch + "</w>"] = len(vocab)
    (path / "vocab.json").write_text(json.dumps(vocab))
    (path / "merges.txt").write_text("#version: 0.2\n")
    tokenizer = CLIPTokenizer(str(path / "vocab.json"), str(path / "merges.txt"))
    tokenizer.save_pretrained(path)

    config = CLIPConfig(
        text_config=dict(hidden_size=24, intermediate_size=48,
                         num_hidden_layers=2, num_attention_heads=2,
                         vocab_size=len(vocab), max_position_embeddings=77,
                         bos_token_id=0, eos_token_id=1),
        vision_config=dict(hidden_size=24, intermediate_size=48,
                           num_hidden_layers=2, num_attention_heads=2,
                           image_size=56, patch_size=14),
        projection_dim=16,
    )
    CLIPModel(config).save_pretrained(path)
    CLIPImageProcessor(size={"shortest_edge": 56},
                       crop_size={"height": 56, "width": 56}).save_pretrained(path)
    return str(path)


def write_view(path: Path, seed: int):
    rng = np.random.default_rng(seed)
    Image.fromarray(rng.integers(0, 255, (56, 56, 3), dtype=np.uint8)).save(path)


@pytest.fixture()
def toy_images(tmp_path):
    """2 objects x 3 views plus a labels CSV (one query, one target)."""
    root = tmp_path / "images"
    for i, obj in enumerate(("obj_a", "obj_b")):
        d = root / obj
        d.mkdir(parents=True)
        for v in range(3):
            write_view(d / f"view_{v:02d}.png", seed=10 * i + v)
    labels = tmp_path / "labels.csv"
    labels.write_text("obj_a,chair,query\nobj_b,chair,target\n")
    return root, labels
