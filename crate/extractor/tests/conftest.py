import os
import shutil
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]
N_EMBD, N_LAYER = 16, 3


def byte_tokenizer():
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers
    from transformers import PreTrainedTokenizerFast

    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    tok = Tokenizer(models.BPE(vocab={c: i for i, c in enumerate(alphabet)}, merges=[]))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    return PreTrainedTokenizerFast(tokenizer_object=tok, eos_token=alphabet[0])


def tiny_gpt2(seed=0):
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(seed)
    cfg = GPT2Config(vocab_size=256, n_positions=256, n_embd=N_EMBD, n_layer=N_LAYER, n_head=2)
    return GPT2LMHeadModel(cfg).eval()


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny-gpt2")
    tiny_gpt2().save_pretrained(d)
    byte_tokenizer().save_pretrained(d)
    return d


@pytest.fixture(scope="session")
def tiny(tiny_dir):
    from probegeom_extract.model import load

    return load(str(tiny_dir))


@pytest.fixture(scope="session")
def engine():
    """Path to the engine binary, built on demand."""
    exe = os.environ.get("PROBEGEOM_BIN") or str(ROOT / "target" / "debug" / "probegeom")
    if not Path(exe).exists() and shutil.which("cargo"):
        subprocess.run(["cargo", "build", "-q", "-p", "probegeom-cli"], cwd=ROOT, check=False)
    if not Path(exe).exists():
        pytest.skip("engine binary not available")
    return exe
