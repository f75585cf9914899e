import pytest
import torch

from physmaster.corpus import ClipGeometry, CorpusConfig, SplitPools, generate_corpus

torch.set_num_threads(2)


def tiny_corpus_config() -> CorpusConfig:
    return CorpusConfig(
        counts={"train": 8, "val": 2, "test_seen": 3, "test_unseen": 3},
        geometry=ClipGeometry(t=8, h=32, w=32, c=1, fps=16.0),
        n_objects_range=(1, 2),
        seen=SplitPools((0, 1, 2, 3), (0, 1), (0.08, 0.13)),
        unseen=SplitPools((8, 9), (3, 4), (0.135, 0.18)),
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return generate_corpus(tiny_corpus_config(), seed=11, out_dir=root, workers=1)
