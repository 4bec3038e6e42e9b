"""BLIP image-text matching encoder adapter.

Tokenizes [CLS] passage [SEP] question [SEP] with a fast tokenizer, runs the
vision tower and the cross-attending text encoder, backpropagates the positive
matching logit, and captures the block-b attention probabilities together with
their gradients. Gradients are taken on the post-softmax attention
probabilities; the vision classification column is dropped so the patch axis
is exactly grid**2.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from transformers import AutoTokenizer, BlipForImageTextRetrieval

from masvqa.container import AttentionDump, DumpMeta, validate_dump

# channel statistics the BLIP image towers were trained with
IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


class EncoderError(Exception):
    """Raised when an extraction step fails for one passage or image."""


class ItmEncoder:
    """One encoder instance per process; extraction is sequential within it."""

    def __init__(self, model_name_or_path: str, device: str = "cpu"):
        self.device = torch.device(device)
        self.model = (
            BlipForImageTextRetrieval.from_pretrained(model_name_or_path)
            .eval()
            .to(self.device)
        )
        self.tokenizer = AutoTokenizer.from_pretrained(model_name_or_path, use_fast=True)
        if not self.tokenizer.is_fast:
            raise EncoderError("a fast tokenizer (with offset mapping) is required")
        vision_cfg = self.model.config.vision_config
        self.image_size = vision_cfg.image_size
        self.grid = vision_cfg.image_size // vision_cfg.patch_size
        self.num_blocks = self.model.config.text_config.num_hidden_layers

    def load_image(self, path) -> torch.Tensor:
        """Decode, resize, and normalize an image to a [1, 3, S, S] tensor."""
        try:
            with Image.open(path) as img:
                rgb = img.convert("RGB").resize(
                    (self.image_size, self.image_size), Image.BICUBIC
                )
        except (OSError, ValueError) as exc:
            raise EncoderError(f"cannot decode image {path}: {exc}") from exc
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
        arr = (arr - np.array(IMAGE_MEAN, dtype=np.float32)) / np.array(
            IMAGE_STD, dtype=np.float32
        )
        return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(self.device)

    def encode(
        self,
        pixel_values: torch.Tensor,
        passage: str,
        question: str,
        block: int = 7,
        max_text_len: int = 512,
    ) -> AttentionDump:
        """Run matching forward/backward and return a validated dump."""
        if not 0 <= block < self.num_blocks:
            raise EncoderError(f"block {block} outside encoder range [0, {self.num_blocks})")
        if not passage.strip():
            raise EncoderError("empty passage")

        enc = self.tokenizer(
            passage,
            question,
            return_offsets_mapping=True,
            truncation="only_first",
            max_length=max_text_len,
            return_tensors="pt",
        )
        input_ids = enc["input_ids"].to(self.device)
        seq_len = input_ids.shape[1]
        sep_id = self.tokenizer.sep_token_id
        sep_idx = (input_ids[0] == sep_id).nonzero(as_tuple=True)[0].tolist()
        if len(sep_idx) != 2:
            raise EncoderError(f"expected 2 separator tokens, found {len(sep_idx)}")
        s0, s1 = sep_idx

        offsets = [tuple(map(int, pair)) for pair in enc["offset_mapping"][0].tolist()]
        # only knowledge-token offsets are meaningful downstream; zero the rest
        offsets = [
            pair if 1 <= idx < s0 else (0, 0) for idx, pair in enumerate(offsets)
        ]
        effective_len = max((b for _, b in offsets), default=0)
        full_knowledge_tokens = len(
            self.tokenizer(passage, add_special_tokens=False)["input_ids"]
        )
        truncated = full_knowledge_tokens > s0 - 1

        vision_out = self.model.vision_model(pixel_values)[0]
        image_atts = torch.ones(vision_out.shape[:-1], dtype=torch.long, device=self.device)
        text_out = self.model.text_encoder(
            input_ids=input_ids,
            attention_mask=enc["attention_mask"].to(self.device),
            encoder_hidden_states=vision_out,
            encoder_attention_mask=image_atts,
            output_attentions=True,
            return_dict=True,
        )
        positive_logit = self.model.itm_head(text_out.last_hidden_state[:, 0, :])[0, 1]
        self_probs = text_out.attentions[block]
        cross_probs = text_out.cross_attentions[block]
        self_grad, cross_grad = torch.autograd.grad(
            positive_logit, [self_probs, cross_probs]
        )

        def squeeze(t: torch.Tensor) -> np.ndarray:
            return t[0].detach().cpu().numpy().astype(np.float32)

        meta = DumpMeta(
            heads=self_probs.shape[1],
            seq_len=seq_len,
            patches=self.grid * self.grid,
            grid=self.grid,
            block=block,
            sep_positions=(s0, s1),
            offset_mapping=tuple(offsets),
            knowledge_text=passage,
            question_text=question,
            truncated=truncated,
            effective_knowledge_len=effective_len if truncated else None,
        )
        dump = AttentionDump(
            meta=meta,
            cross_attn=squeeze(cross_probs)[:, :, 1:],  # drop the vision CLS column
            cross_grad=squeeze(cross_grad)[:, :, 1:],
            self_attn=squeeze(self_probs),
            self_grad=squeeze(self_grad),
        )
        validate_dump(dump)
        return dump
