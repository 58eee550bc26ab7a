import pytest
import torch

from pnrnet.checks import toy_config, toy_sentence
from pnrnet.data import encode_sentence
from pnrnet.model import PnRNet

torch.set_num_threads(1)


@pytest.fixture
def toy():
    """A d=8 model with its vocabulary and one encoded 6-token sentence."""
    sentence, vocab = toy_sentence()
    model = PnRNet(toy_config(), vocab)
    return model, encode_sentence(sentence, vocab), sentence
