import numpy as np
import pytest
import torch

from changekit.config import RunConfig
from changekit.data import Corpus, CorpusSpec
from changekit.synth import SynthSpec, generate_synthetic


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def synth_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_synthetic(SynthSpec(n_pairs=8, size=64, seed=0), out)
    return out


@pytest.fixture(scope="session")
def synth_corpus(synth_corpus_dir):
    return Corpus(CorpusSpec(root=str(synth_corpus_dir)))


def central_difference_grad(f, x: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Central finite-difference gradient of scalar f w.r.t. every entry of x."""
    g = torch.zeros_like(x, dtype=torch.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.numel()):
        orig = flat[j].item()
        flat[j] = orig + eps
        fp = float(f())
        flat[j] = orig - eps
        fm = float(f())
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom
