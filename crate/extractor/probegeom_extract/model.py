"""Everything that touches torch: hidden-state capture, the steering hook,
greedy generation and output baselines."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from . import baselines as bl
from .formats import BASELINE, DIRECTIONS, Bundle, ValidationError
from .paraphrase import Row

Encode = Callable[[str], List[int]]
Decode = Callable[[List[int]], str]

POSITIONS = ("answer", "question")
SEP = "\n"


def blocks(model) -> torch.nn.ModuleList:
    """The decoder blocks whose outputs form the residual stream."""
    for path in ("transformer.h", "model.layers", "gpt_neox.layers", "model.decoder.layers"):
        m = model
        try:
            for part in path.split("."):
                m = getattr(m, part)
        except AttributeError:
            continue
        if isinstance(m, torch.nn.ModuleList):
            return m
    raise ValidationError(f"cannot locate decoder blocks in {type(model).__name__}")


def hidden_size(model) -> int:
    c = model.config
    for k in ("hidden_size", "n_embd", "d_model"):
        if getattr(c, k, None):
            return int(getattr(c, k))
    raise ValidationError("model config has no hidden size")


def max_positions(model) -> Optional[int]:
    c = model.config
    for k in ("n_positions", "max_position_embeddings"):
        if getattr(c, k, None):
            return int(getattr(c, k))
    return None


def is_oom(e: BaseException) -> bool:
    if isinstance(e, getattr(torch.cuda, "OutOfMemoryError", ())):
        return True
    return isinstance(e, RuntimeError) and "out of memory" in str(e).lower()


def batched(fn, items: Sequence, batch_size: int, max_retries: int = 4) -> list:
    """Applies `fn` to consecutive slices, halving the slice on OOM."""
    if batch_size < 1:
        raise ValidationError("batch size must be positive")
    out, i, retries = [], 0, 0
    while i < len(items):
        chunk = items[i : i + batch_size]
        try:
            out.extend(fn(chunk))
        except Exception as e:
            if not is_oom(e) or batch_size == 1 or retries >= max_retries:
                raise
            retries += 1
            batch_size = max(1, batch_size // 2)
            print(f"out of memory, retrying with batch size {batch_size}", file=sys.stderr)
            if torch.cuda.is_available():
                torch.cuda.empty_cache()
            continue
        i += len(chunk)
    return out


@dataclass
class Encoded:
    index: int
    ids: List[int]
    question_len: int
    answer_len: int


@dataclass
class Extraction:
    states: Dict[int, np.ndarray]
    kept: List[int]
    answer_lengths: List[int]
    errors: List[tuple] = field(default_factory=list)


def encode_rows(rows: Sequence[Row], encode: Encode, limit: Optional[int]) -> tuple:
    ok, errors = [], []
    for i, r in enumerate(rows):
        try:
            q = list(encode(r.question))
            a = list(encode(SEP + r.answer))
        except Exception as e:
            errors.append((i, f"tokenization failed: {e}"))
            continue
        if not q or not a:
            errors.append((i, "empty question or answer after tokenization"))
        elif limit is not None and len(q) + len(a) > limit:
            errors.append((i, f"{len(q) + len(a)} tokens exceed the model's {limit} positions"))
        else:
            ok.append(Encoded(i, q + a, len(q), len(a)))
    return ok, errors


@torch.no_grad()
def last_token_states(
    model,
    encode: Encode,
    rows: Sequence[Row],
    layers: Sequence[int],
    *,
    position: str = "answer",
    batch_size: int = 8,
    device: str = "cpu",
) -> Extraction:
    """Residual stream after each block in `layers` at one token per row.

    `position="answer"` reads the final token of question+answer,
    `"question"` the final question token. Rows that fail to tokenize are
    reported in `errors` and skipped.
    """
    if position not in POSITIONS:
        raise ValidationError(f"position must be one of {POSITIONS}")
    n_blocks = len(blocks(model))
    bad = [k for k in layers if not 0 <= k < n_blocks]
    if bad or not layers:
        raise ValidationError(f"layers {list(bad) or '[]'} outside 0..{n_blocks - 1}")
    if not rows:
        raise ValidationError("no rows")
    enc, errors = encode_rows(rows, encode, max_positions(model))
    if not enc:
        raise ValidationError(f"every row failed: {errors[0][1]}")

    def run(chunk: List[Encoded]):
        width = max(len(e.ids) for e in chunk)
        ids = torch.zeros((len(chunk), width), dtype=torch.long)
        mask = torch.zeros_like(ids)
        for j, e in enumerate(chunk):
            ids[j, : len(e.ids)] = torch.tensor(e.ids)
            mask[j, : len(e.ids)] = 1
        hs = model(input_ids=ids.to(device), attention_mask=mask.to(device), output_hidden_states=True).hidden_states
        pos = torch.tensor([e.question_len - 1 if position == "question" else len(e.ids) - 1 for e in chunk])
        rows_idx = torch.arange(len(chunk))
        # hidden_states[0] is the embedding output
        return [
            {k: hs[k + 1][rows_idx, pos.to(hs[k + 1].device)][j].float().cpu().numpy() for k in layers}
            for j in range(len(chunk))
        ]

    per_row = batched(run, enc, batch_size)
    states = {k: np.stack([r[k] for r in per_row]) for k in layers}
    return Extraction(states, [e.index for e in enc], [e.answer_len for e in enc], errors)


class Steering:
    """Forward hook adding `alpha * scale * direction` to the output of one
    block at every position."""

    def __init__(self, model, layer: int, direction: np.ndarray, scale: float, alpha: float = 0.0):
        bs = blocks(model)
        if not 0 <= layer < len(bs):
            raise ValidationError(f"bundle layer {layer} outside 0..{len(bs) - 1}")
        d = hidden_size(model)
        if len(direction) != d:
            raise ValidationError(f"direction has {len(direction)} dims, model has {d}")
        self.block = bs[layer]
        p = next(model.parameters())
        self.unit = torch.as_tensor(np.asarray(direction), dtype=p.dtype, device=p.device)
        self.scale = float(scale)
        self.alpha = float(alpha)
        self.handle = None

    def delta(self) -> torch.Tensor:
        return self.alpha * self.scale * self.unit

    def hook(self, module, inputs, output):
        if self.alpha == 0.0:
            return output
        if isinstance(output, tuple):
            return (output[0] + self.delta(),) + output[1:]
        return output + self.delta()

    def __enter__(self):
        self.handle = self.block.register_forward_hook(self.hook)
        return self

    def __exit__(self, *exc):
        self.handle.remove()
        self.handle = None


@torch.no_grad()
def greedy(model, ids: List[int], max_new_tokens: int, eos: Optional[int] = None, device: str = "cpu") -> List[int]:
    x = torch.tensor([ids], device=device)
    out = []
    limit = max_positions(model)
    for _ in range(max_new_tokens):
        if limit is not None and x.shape[1] >= limit:
            break
        t = int(model(input_ids=x).logits[0, -1].argmax())
        out.append(t)
        if t == eos:
            break
        x = torch.cat([x, torch.tensor([[t]], device=device)], dim=1)
    return out


def steer_generate(
    model,
    encode: Encode,
    decode: Decode,
    bundle: Bundle,
    prompts: Sequence[dict],
    *,
    max_new_tokens: int = 32,
    eos: Optional[int] = None,
    device: str = "cpu",
) -> List[dict]:
    """One greedy generation per (direction, alpha, prompt), plus an
    unsteered baseline per prompt. `prompts` are `{"item", "prompt"}`."""
    model.eval()
    items = [int(p["item"]) for p in prompts]
    if len(set(items)) != len(items):
        raise ValidationError("duplicate prompt item")
    steer = Steering(model, bundle.layer_index, bundle.directions["learned"], bundle.scale)
    encoded = [list(encode(p["prompt"])) for p in prompts]
    rows = []

    def emit(direction, alpha):
        for item, p, ids in zip(items, prompts, encoded):
            c = greedy(model, ids, max_new_tokens, eos, device)
            rows.append({"item": item, "direction": direction, "alpha": alpha, "prompt": p["prompt"],
                         "completion_ids": c, "completion": decode(c)})

    emit(BASELINE, 0.0)
    for d in DIRECTIONS:
        steer.unit = torch.as_tensor(bundle.directions[d], dtype=steer.unit.dtype, device=steer.unit.device)
        with steer:
            for a in bundle.alpha_values:
                steer.alpha = a
                emit(d, a)
    return rows


@torch.no_grad()
def output_baselines(model, encode: Encode, rows: Sequence[Row], device: str = "cpu") -> tuple:
    """Per row: P(" Yes") after a self-check question, mean answer-token NLL
    and mean predictive entropy over the answer tokens.

    Returns `(scores, errors)`; `scores[i]` lines up with `rows[i]` and is
    None for rows in `errors`.
    """
    if not rows:
        raise ValidationError("no rows")
    model.eval()
    yes = list(encode(bl.YES))
    if not yes:
        raise ValidationError("tokenizer produced no ids for the Yes token")
    enc, errors = encode_rows(rows, encode, max_positions(model))
    scores = [None] * len(rows)
    for e in enc:
        try:
            judge = e.ids + list(encode(bl.P_TRUE_SUFFIX))
        except Exception as err:
            errors.append((e.index, f"tokenization failed: {err}"))
            continue
        limit = max_positions(model)
        if limit is not None and len(judge) > limit:
            errors.append((e.index, "self-check prompt exceeds the model's positions"))
            continue
        logits = model(input_ids=torch.tensor([e.ids], device=device)).logits[0].double().cpu().numpy()
        nll, ent = bl.answer_scores(logits, np.array(e.ids), e.question_len)
        last = model(input_ids=torch.tensor([judge], device=device)).logits[0, -1].double().cpu().numpy()
        scores[e.index] = {"p_true": bl.p_true(last, yes[0]), "nll": nll, "token_entropy": ent}
    return scores, sorted(errors)


def load(name: str, device: str = "cpu"):
    """Model, encode and decode for a hub id or local directory."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tok = AutoTokenizer.from_pretrained(name)
    model = AutoModelForCausalLM.from_pretrained(name).to(device)
    model.eval()

    def encode(text: str) -> List[int]:
        return tok(text, add_special_tokens=False)["input_ids"]

    def decode(ids: List[int]) -> str:
        return tok.decode(ids)

    return model, encode, decode, tok.eos_token_id
