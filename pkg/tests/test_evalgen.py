import numpy as np
import pytest

from wifipath import evalgen as ev
from wifipath import tokenizer as tok
from wifipath import transformer as tf
from wifipath.dataset import CLASS_NAMES, PromptExample
from wifipath.tokenizer import EOS
from wifipath.transformer import ModelConfig


def tiny_decoder(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), arch="decoder", d_model=8,
                      n_heads=2, n_layers=1, d_ffn=16, max_len=48, rel_window=2)
    return tf.init_params(cfg, seed=0)


def toy_examples():
    rows = []
    for i, cls in enumerate([0, 1, 2, 3, 0, 1]):
        rows.append(PromptExample(prompt=f"case {i} reading", label=cls,
                                  snr_db=10.0, modulation="QPSK",
                                  frame_seed=i, split="test"))
    return rows


class TestParsePathology:
    @pytest.mark.parametrize("cls,name", list(enumerate(CLASS_NAMES)))
    def test_round_trip_identity(self, cls, name):
        assert ev.parse_pathology(name) == cls

    def test_embedded_match(self):
        assert ev.parse_pathology("verdict: High Noise likely") == 2

    def test_earliest_match_wins(self):
        assert ev.parse_pathology("Severe Noise not Low Noise") == 3

    def test_case_sensitive(self):
        assert ev.parse_pathology("severe noise") == ev.UNPARSEABLE

    def test_garbage_unparseable(self):
        assert ev.parse_pathology("((( 7 %") == ev.UNPARSEABLE

    def test_empty_unparseable(self):
        assert ev.parse_pathology("") == ev.UNPARSEABLE


class TestGreedyGenerate:
    def test_immediate_eos_yields_empty(self):
        """A model rigged so the EOS logit always dominates must stop at
        step one and return the empty string."""
        vocab = tok.build_vocab(["alpha beta gamma"])
        params = tiny_decoder(vocab)
        params["tok_emb"].values[:] = 0.0
        params["tok_emb"].values[EOS, 0] = 10.0
        params["ln_f.gain"].values[:] = 0.0
        params["ln_f.bias"].values[:] = 0.0
        params["ln_f.bias"].values[0] = 5.0
        assert ev.greedy_generate(params, "alpha beta", vocab) == ""

    def test_budget_respected(self):
        vocab = tok.build_vocab(["alpha beta gamma"])
        params = tiny_decoder(vocab)
        out = ev.greedy_generate(params, "alpha beta", vocab, max_new=3)
        assert len(tok.tokenize(out)) <= 3

    def test_deterministic(self):
        vocab = tok.build_vocab(["alpha beta gamma"])
        params = tiny_decoder(vocab)
        a = ev.greedy_generate(params, "alpha gamma", vocab, max_new=4)
        b = ev.greedy_generate(params, "alpha gamma", vocab, max_new=4)
        assert a == b

    def test_overlong_prompt_rejected(self):
        vocab = tok.build_vocab(["word"])
        params = tiny_decoder(vocab)
        with pytest.raises((ev.EvalError, tok.TokenizerError)):
            ev.greedy_generate(params, "word " * 60, vocab, max_new=8)


class TestEvalCausal:
    def scripted(self, outputs):
        """Monkeypatch-style stub: pops scripted completions in order."""
        queue = list(outputs)
        return lambda params, prompt, vocab, max_new: queue.pop(0)

    def test_rates_against_hand_count(self, monkeypatch):
        examples = toy_examples()  # golds: 0 1 2 3 0 1
        outputs = [CLASS_NAMES[0], CLASS_NAMES[1], CLASS_NAMES[3],
                   CLASS_NAMES[3], "static", CLASS_NAMES[1]]
        monkeypatch.setattr(ev, "greedy_generate", self.scripted(outputs))
        rep = ev.eval_causal(None, examples, None)
        assert rep.exact_match_rate == pytest.approx(4 / 6)
        assert rep.unparseable_rate == pytest.approx(1 / 6)
        assert rep.per_class_rates["Low Noise"] == pytest.approx(1 / 2)
        assert rep.per_class_rates["High Noise"] == 0.0
        assert rep.n_examples == 6

    def test_samples_cover_distinct_classes(self, monkeypatch):
        examples = toy_examples()
        monkeypatch.setattr(ev, "greedy_generate",
                            self.scripted([CLASS_NAMES[e.label] for e in examples]))
        rep = ev.eval_causal(None, examples, None, n_samples=3)
        golds = [s.gold for s in rep.samples]
        assert len(golds) == len(set(golds)) == 3

    def test_perfect_model_scores_one(self, monkeypatch):
        examples = toy_examples()
        monkeypatch.setattr(ev, "greedy_generate",
                            self.scripted([CLASS_NAMES[e.label] for e in examples]))
        rep = ev.eval_causal(None, examples, None)
        assert rep.exact_match_rate == 1.0 and rep.unparseable_rate == 0.0

    def test_empty_examples_rejected(self):
        with pytest.raises(ev.EvalError):
            ev.eval_causal(None, [], None)

    def test_json_payload(self, monkeypatch):
        import json
        examples = toy_examples()
        monkeypatch.setattr(ev, "greedy_generate",
                            self.scripted([CLASS_NAMES[e.label] for e in examples]))
        payload = json.loads(ev.eval_causal(None, examples, None).to_json())
        assert payload["exact_match_rate"] == 1.0
        assert payload["n_examples"] == 6
