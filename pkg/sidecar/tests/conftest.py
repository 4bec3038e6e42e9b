"""Builds a tiny randomly initialized BLIP ITM checkpoint for the tests.

The network topology matches the real encoder family (9 text blocks so the
default block index 7 is valid, a 3x3 vision patch grid) but the weights are
seeded random — small enough to run everywhere while exercising the full
tokenize/forward/backward/serialize path.
"""

import numpy as np
import pytest
import torch
from PIL import Image
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import (
    BertTokenizerFast,
    BlipConfig,
    BlipForImageTextRetrieval,
    BlipTextConfig,
    BlipVisionConfig,
)

VOCAB_WORDS = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "eiffel", "tower", "is", "a", "wrought", "iron", "lattice",
    "in", "paris", "gustave", "designed", "tall", "france", "was",
    "built", "from", "1887", "to", "1889", "how", "who", "it", "when",
    "and", "of", "##s", "##er", "world", "fair", "for",
]


def build_tokenizer(out_dir):
    vocab = {w: i for i, w in enumerate(VOCAB_WORDS)}
    backend = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]"))
    backend.normalizer = normalizers.BertNormalizer(lowercase=True)
    backend.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    backend.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    tokenizer = BertTokenizerFast(
        tokenizer_object=backend,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )
    tokenizer.save_pretrained(out_dir)
    return tokenizer


def build_model(out_dir):
    config = BlipConfig(
        text_config=BlipTextConfig(
            vocab_size=len(VOCAB_WORDS),
            hidden_size=32,
            num_hidden_layers=9,
            num_attention_heads=2,
            intermediate_size=64,
            encoder_hidden_size=32,
            max_position_embeddings=512,
            pad_token_id=0,
            bos_token_id=2,
            sep_token_id=3,
        ).to_dict(),
        vision_config=BlipVisionConfig(
            hidden_size=32,
            num_hidden_layers=2,
            num_attention_heads=2,
            intermediate_size=64,
            image_size=48,
            patch_size=16,
        ).to_dict(),
    )
    torch.manual_seed(0)
    model = BlipForImageTextRetrieval(config)
    model.save_pretrained(out_dir)
    return model


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-itm")
    build_tokenizer(str(out))
    build_model(str(out))
    return str(out)


@pytest.fixture(scope="session")
def images(tmp_path_factory):
    """Three small real images with distinct content."""
    out = tmp_path_factory.mktemp("images")
    paths = []
    rng = np.random.default_rng(42)
    for i in range(3):
        arr = rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)
        arr[:, : 20 * (i + 1) % 64] //= i + 2  # distinct structure per image
        path = out / f"img{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(str(path))
    return paths


TRIPLES = [
    (
        "the eiffel tower is a wrought iron lattice tower in paris",
        "how tall is the tower",
    ),
    (
        "gustave eiffel designed the tall tower in france",
        "who designed it",
    ),
    (
        "the tower was built from 1887 to 1889 for the world fair",
        "when was it built",
    ),
]
