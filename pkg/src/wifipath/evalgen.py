"""Greedy decoding for the causal model and exact-match evaluation.

Completions are parsed back to a pathology class by case-sensitive search
for the four class names; unparseable completions count as errors in the
exact-match rate and are reported separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tokenizer as tok
from .dataset import CLASS_NAMES, N_CLASSES
from .tokenizer import EOS, Vocab
from .transformer import ModelParams, decoder_forward

UNPARSEABLE = "unparseable"


class EvalError(ValueError):
    pass


@dataclass
class Completion:
    prompt: str
    generated: str
    parsed: int | str  # class index or UNPARSEABLE
    gold: int


def greedy_generate(params: ModelParams, prompt: str, vocab: Vocab, max_new: int = 8) -> str:
    """Append argmax tokens until [EOS] or the budget; np.argmax breaks
    ties toward the lowest token id."""
    seq = tok.encode(prompt, vocab, "causal", params.config.max_len - max_new)
    ids = list(seq.ids[:seq.length - 1])  # drop the EOS that encode() appends
    if len(ids) + max_new > params.config.max_len:
        raise EvalError("prompt too long for generation budget")
    generated = []
    for _ in range(max_new):
        logits = decoder_forward(params, np.array([ids]))
        nxt = int(np.argmax(logits.values[0, -1]))
        if nxt == EOS:
            break
        generated.append(nxt)
        ids.append(nxt)
    return tok.decode(generated, vocab)


def parse_pathology(completion: str):
    """Earliest case-sensitive class-name match wins; no match is
    UNPARSEABLE."""
    best_pos, best_cls = None, UNPARSEABLE
    for cls, name in enumerate(CLASS_NAMES):
        pos = completion.find(name)
        if pos >= 0 and (best_pos is None or pos < best_pos):
            best_pos, best_cls = pos, cls
    return best_cls


@dataclass
class EvalReport:
    exact_match_rate: float
    unparseable_rate: float
    per_class_rates: dict  # class name -> exact-match rate on that gold class
    n_examples: int
    samples: list  # Completion

    def to_json(self) -> str:
        payload = {
            "exact_match_rate": self.exact_match_rate,
            "unparseable_rate": self.unparseable_rate,
            "per_class_rates": self.per_class_rates,
            "n_examples": self.n_examples,
        }
        return json.dumps(payload, indent=2) + "\n"

    def render_samples(self) -> str:
        blocks = []
        for s in self.samples:
            parsed = CLASS_NAMES[s.parsed] if isinstance(s.parsed, int) else s.parsed
            blocks.append(f"{s.prompt} {s.generated}\n"
                          f"  [parsed: {parsed} | gold: {CLASS_NAMES[s.gold]}]")
        return "\n\n".join(blocks)


def default_generation_budget() -> int:
    """Longest class phrase in tokens. With this budget the prompt window
    in greedy_generate (max_len - budget - 1) matches the prompt window
    used during training (max_len - completion - EOS), so token positions
    line up between the two."""
    return max(len(tok.tokenize(name)) for name in CLASS_NAMES)


def eval_causal(params: ModelParams, examples, vocab: Vocab, max_new: int | None = None,
                n_samples: int = 3) -> EvalReport:
    """Greedy-decode every test prompt and score parsed-class exact match.
    Keeps up to ``n_samples`` sample completions, one per distinct gold
    class present."""
    if not examples:
        raise EvalError("empty test split")
    if max_new is None:
        max_new = default_generation_budget()
    completions = []
    for e in examples:
        text = greedy_generate(params, e.prompt, vocab, max_new)
        completions.append(Completion(prompt=e.prompt, generated=text,
                                      parsed=parse_pathology(text), gold=e.label))
    n = len(completions)
    exact = sum(1 for c in completions if c.parsed == c.gold)
    unparseable = sum(1 for c in completions if c.parsed == UNPARSEABLE)
    per_class = {}
    for cls in range(N_CLASSES):
        of_class = [c for c in completions if c.gold == cls]
        if of_class:
            per_class[CLASS_NAMES[cls]] = sum(1 for c in of_class if c.parsed == cls) / len(of_class)
    samples, seen = [], set()
    for c in completions:
        if c.gold not in seen and len(samples) < n_samples:
            samples.append(c)
            seen.add(c.gold)
    return EvalReport(exact_match_rate=exact / n, unparseable_rate=unparseable / n,
                      per_class_rates=per_class, n_examples=n, samples=samples)
