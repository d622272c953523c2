import json
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from changekit.core import LabelSet
from changekit.data import Corpus, CorpusSpec, CorruptImage, LayoutError, MissingPair, load_corpus

TOY = Path(__file__).parent / "data" / "toy"


def test_toy_corpus_streams_in_filename_order():
    items = list(load_corpus(CorpusSpec(root=str(TOY))))
    assert [p.id for p, _ in items] == ["pair_0000", "pair_0001"]
    for pair, ls in items:
        assert isinstance(ls, LabelSet) and ls.mode == "supervised"
        assert pair.t1.shape == (3, 64, 64)
        assert float(pair.t1.min()) >= 0.0 and float(pair.t1.max()) <= 1.0


def test_labels_binarized_to_01():
    corpus = Corpus(CorpusSpec(root=str(TOY)))
    for pid in corpus.ids:
        label = corpus.pixel_label(pid)
        assert set(torch.unique(label).tolist()) <= {0, 1}
    # raw file really is {0, 255}
    raw = np.asarray(Image.open(TOY / "label" / "pair_0000.png"))
    assert set(np.unique(raw)) <= {0, 255}


def test_weak_mode_image_labels_from_pixel_truth():
    items = list(load_corpus(CorpusSpec(root=str(TOY)), mode="weak"))
    corpus = Corpus(CorpusSpec(root=str(TOY)))
    truth = json.loads((TOY / "image_labels.json").read_text())
    for pair, ls in items:
        assert ls.image_level == truth[pair.id]


def test_unsupervised_mode_has_no_labels():
    for _, ls in load_corpus(CorpusSpec(root=str(TOY)), mode="unsupervised"):
        assert ls.pixel is None and ls.image_level is None


def test_tiling_counts(tmp_path):
    for sub in ("A", "B", "label"):
        (tmp_path / sub).mkdir()
    rng = np.random.default_rng(0)
    img = (rng.random((128, 128, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "A" / "big.png")
    Image.fromarray(img).save(tmp_path / "B" / "big.png")
    Image.fromarray(np.zeros((128, 128), dtype=np.uint8)).save(tmp_path / "label" / "big.png")
    items = list(load_corpus(CorpusSpec(root=str(tmp_path), patch_size=64)))
    assert len(items) == 4
    assert sorted(p.id for p, _ in items) == ["big_r0_c0", "big_r0_c1", "big_r1_c0", "big_r1_c1"]
    for p, ls in items:
        assert p.t1.shape == (3, 64, 64) and ls.pixel.shape == (64, 64)


def test_split_subdirectory_layout(tmp_path):
    import shutil

    shutil.copytree(TOY, tmp_path / "train")
    corpus = Corpus(CorpusSpec(root=str(tmp_path), split="train"))
    assert len(corpus.ids) == 2


def test_layout_errors(tmp_path):
    with pytest.raises(LayoutError):
        Corpus(CorpusSpec(root=str(tmp_path)))
    (tmp_path / "A").mkdir()
    with pytest.raises(LayoutError):
        Corpus(CorpusSpec(root=str(tmp_path)))  # no B/
    with pytest.raises(LayoutError):
        CorpusSpec(root=str(tmp_path), layout="coco")


def test_missing_pair_and_corrupt_image(tmp_path):
    import shutil

    shutil.copytree(TOY, tmp_path / "c")
    (tmp_path / "c" / "B" / "pair_0001.png").unlink()
    corpus = Corpus(CorpusSpec(root=str(tmp_path / "c")))
    with pytest.raises(MissingPair):
        list(corpus.items())
    (tmp_path / "c" / "B" / "pair_0001.png").write_bytes(b"not a png")
    with pytest.raises(CorruptImage):
        list(corpus.items())


def test_supervised_mode_requires_labels(tmp_path):
    import shutil

    shutil.copytree(TOY, tmp_path / "c")
    shutil.rmtree(tmp_path / "c" / "label")
    corpus = Corpus(CorpusSpec(root=str(tmp_path / "c")))
    assert not corpus.has_pixel_labels
    with pytest.raises(MissingPair):
        list(corpus.items("supervised"))
    # weak mode still works through image_labels.json
    items = list(corpus.items("weak"))
    assert all(ls.image_level in (0, 1) for _, ls in items)


def test_mask_set_loading():
    corpus = Corpus(CorpusSpec(root=str(TOY)))
    truth = json.loads((TOY / "image_labels.json").read_text())
    changed = [pid for pid in corpus.ids if truth[pid] == 1]
    ms = corpus.mask_set(changed[0])
    assert len(ms.masks) >= 1
    for m in ms.masks:
        assert int(m.sum()) > 0
    missing = corpus.mask_set("no_such_pair", shape=(64, 64))
    assert missing.masks == [] and missing.shape == (64, 64)
