import math
from pathlib import Path

import numpy as np
import pytest

from fixture_tasks import demos, query
from instruct_forge import autodiff as ad
from instruct_forge.evaluation import (
    ChoiceTask,
    EvalReport,
    FewShotSpec,
    PerplexityItem,
    QuestionTemplate,
    assemble_fewshot_prompt,
    classify_by_likelihood,
    corpus_perplexity,
    response_perplexity,
    run_choice_eval,
    score_continuation,
)
from instruct_forge.model import DecoderModel, ModelConfig
from instruct_forge.tokenizer import VOCAB_SIZE, ByteTokenizer

FIXTURES = Path(__file__).parent / "fixtures"
TOK = ByteTokenizer()


class RowModel:
    """Context-free stub: every position emits the same logit row."""

    max_seq_len = 4096

    def __init__(self, row):
        self.row = np.asarray(row, dtype=np.float64)

    def logits(self, ids):
        return np.tile(self.row, (len(ids), 1))


def uniform_model():
    return RowModel(np.zeros(VOCAB_SIZE))


def favored_byte_model(ch, bonus=5.0):
    row = np.zeros(VOCAB_SIZE)
    row[ord(ch)] = bonus
    return RowModel(row)


def two_byte_model(pa=0.75, pb=0.25):
    """Probability mass only on bytes 'a' and 'b'."""
    row = np.full(VOCAB_SIZE, -1e9)
    row[ord("a")] = math.log(pa)
    row[ord("b")] = math.log(pb)
    return RowModel(row)


class TestTaskValidation:
    def test_gold_out_of_range(self):
        with pytest.raises(ValueError):
            ChoiceTask("i", {"F": "v"}, ("a", "b"), gold=2)

    def test_needs_two_choices(self):
        with pytest.raises(ValueError):
            ChoiceTask("i", {"F": "v"}, ("a",), gold=0)

    def test_bad_version(self):
        with pytest.raises(ValueError):
            ChoiceTask("i", {"F": "v"}, ("a", "b"), gold=0, version="v1.0")

    def test_spec_k_bounded_by_demos(self):
        with pytest.raises(ValueError):
            FewShotSpec(k=2, demonstrations=(query(),))

    def test_spec_negative_k(self):
        with pytest.raises(ValueError):
            FewShotSpec(k=-1)

    def test_empty_response_item(self):
        with pytest.raises(ValueError):
            PerplexityItem("q", "")


class TestGoldenPrompts:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_v02_matches_golden(self, k):
        golden = (FIXTURES / f"fewshot_v0.2_k{k}.txt").read_text(encoding="utf-8")
        spec = FewShotSpec(k=k, demonstrations=demos("v0.2"))
        assert assemble_fewshot_prompt(query("v0.2"), spec) == golden

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_v03_matches_golden(self, k):
        golden = (FIXTURES / f"fewshot_v0.3_k{k}.txt").read_text(encoding="utf-8")
        spec = FewShotSpec(k=k, demonstrations=demos("v0.3"))
        assert assemble_fewshot_prompt(query("v0.3"), spec) == golden

    def test_v02_query_ends_with_open_label(self):
        spec = FewShotSpec(k=0)
        out = assemble_fewshot_prompt(query("v0.2"), spec)
        assert out.endswith("Relationship: ")

    def test_v03_query_ends_with_response_header(self):
        spec = FewShotSpec(k=0)
        out = assemble_fewshot_prompt(query("v0.3"), spec)
        assert out.endswith("### Response:\n")

    @pytest.mark.parametrize("version", ["v0.2", "v0.3"])
    def test_more_shots_extends_prompt(self, version):
        label = "Relationship: " if version == "v0.2" else "### Response:\n"
        for k in range(3):
            a = assemble_fewshot_prompt(query(version),
                                        FewShotSpec(k, demos(version)))
            b = assemble_fewshot_prompt(query(version),
                                        FewShotSpec(k + 1, demos(version)))
            assert a.count(label) == k + 1
            assert b.count(label) == k + 2
            # both prompts pose the same open query at the end
            tail = label if version == "v0.2" else label
            assert a.endswith(tail) and b.endswith(tail)

    def test_version_override(self):
        spec = FewShotSpec(k=1, demonstrations=demos("v0.2"))
        forced = assemble_fewshot_prompt(query("v0.2"), spec, template_version="v0.3")
        assert forced.startswith("Below is a combination")


class TestScoreContinuation:
    def test_uniform_score_is_length_times_log_vocab(self):
        score = score_continuation(uniform_model(), "any prompt", "ab")
        assert abs(score - 2 * -math.log(VOCAB_SIZE)) < 1e-9

    def test_empty_continuation_rejected(self):
        with pytest.raises(ValueError):
            score_continuation(uniform_model(), "p", "")

    def test_left_truncation_keeps_continuation(self):
        model = uniform_model()
        model.max_seq_len = 8
        score = score_continuation(model, "x" * 100, "ab")
        assert abs(score - 2 * -math.log(VOCAB_SIZE)) < 1e-9

    def test_continuation_too_long_for_context(self):
        model = uniform_model()
        model.max_seq_len = 4
        with pytest.raises(ValueError, match="context"):
            score_continuation(model, "p", "abcdef")

    def test_additive_over_tokens(self):
        model = two_byte_model()
        s = score_continuation(model, "q", "aab")
        expected = 2 * math.log(0.75) + math.log(0.25)
        assert abs(s - expected) < 1e-9


class TestClassify:
    def task(self, choices, gold=0):
        return ChoiceTask("pick", {"Input": "x"}, choices, gold=gold, version="v0.2")

    def test_picks_favored_choice(self):
        model = favored_byte_model("y")
        t = self.task(("xx", "yy", "zz"))
        assert classify_by_likelihood(model, t, FewShotSpec(k=0)) == 1

    def test_tie_goes_to_lowest_index(self):
        t = self.task(("aa", "bb", "cc"))
        assert classify_by_likelihood(uniform_model(), t, FewShotSpec(k=0)) == 0

    def test_length_normalization_flips_winner(self):
        row = np.zeros(VOCAB_SIZE)
        row[ord("a")] = 2.0
        row[ord("b")] = 2.1
        model = RowModel(row)
        t = self.task(("a", "bb"))
        assert classify_by_likelihood(model, t, FewShotSpec(k=0)) == 0
        assert classify_by_likelihood(model, t, FewShotSpec(k=0),
                                      length_normalize=True) == 1


class TestPerplexity:
    def test_uniform_model_gives_vocab_size(self):
        item = PerplexityItem("why?", "because")
        ppl = response_perplexity(uniform_model(), item)
        assert abs(ppl - VOCAB_SIZE) < 1e-4

    def test_half_probability_gives_two(self):
        # every response byte has p = 0.5; EOS is excluded or this blows up
        model = two_byte_model(pa=0.5, pb=0.5)
        ppl = response_perplexity(model, PerplexityItem("q", "ab"))
        assert abs(ppl - 2.0) < 1e-9

    def test_hand_computed_mixed_probs(self):
        model = two_byte_model(pa=0.75, pb=0.25)
        ppl = response_perplexity(model, PerplexityItem("q", "aab"))
        expected = math.exp(-(2 * math.log(0.75) + math.log(0.25)) / 3)
        assert abs(ppl - expected) < 1e-9

    def test_custom_question_template(self):
        tpl = QuestionTemplate(body="Q: {question}\nA: ")
        ppl = response_perplexity(uniform_model(), PerplexityItem("hi", "yo"), tpl)
        assert abs(ppl - VOCAB_SIZE) < 1e-4

    def test_corpus_pooled_and_mean(self):
        model = two_byte_model(pa=0.75, pb=0.25)
        items = [PerplexityItem("q", "aa"), PerplexityItem("q", "b")]
        pooled, report = corpus_perplexity(model, items)
        expected_pooled = math.exp((2 * -math.log(0.75) + -math.log(0.25)) / 3)
        assert abs(pooled - expected_pooled) < 1e-9
        assert abs(report.perplexity_mean - (4 / 3 + 4) / 2) < 1e-9
        assert len(report.item_perplexities) == 2

    def test_corpus_requires_items(self):
        with pytest.raises(ValueError):
            corpus_perplexity(uniform_model(), [])

    def test_matches_training_loss_on_real_model(self):
        # exp(masked cross entropy over response positions) within float error
        model = DecoderModel(ModelConfig(d_model=32, n_heads=2, n_layers=2,
                                         max_seq_len=128, seed=9))
        item = PerplexityItem("what color?", "blue")
        ppl = response_perplexity(model, item)
        prompt = QuestionTemplate().render(item.question)
        ids = ([TOK.bos_id] + TOK.encode(prompt).ids + TOK.encode(item.response).ids)
        inputs = np.asarray(ids[:-1])
        targets = np.asarray(ids[1:])
        mask = np.zeros(len(targets), dtype=bool)
        mask[-len(item.response.encode()):] = True
        loss = ad.softmax_cross_entropy(model.forward(inputs), targets, mask)
        assert abs(ppl - math.exp(loss.item())) / ppl < 1e-4


class TestRunChoiceEval:
    def tasks(self, n, gold=0):
        # the first max(shots) entries double as demonstrations
        return [ChoiceTask("pick", {"Input": f"item {i}"}, ("xx", "yy", "zz"),
                           gold=gold, version="v0.2", answer_label="Relationship")
                for i in range(n)]

    def test_perfect_when_model_favors_gold(self):
        report = run_choice_eval(favored_byte_model("x"), self.tasks(7, gold=0),
                                 shots=[0, 1, 3])
        assert report.accuracy == {0: 1.0, 1: 1.0, 3: 1.0}

    def test_zero_when_model_favors_distractor(self):
        report = run_choice_eval(favored_byte_model("x"), self.tasks(4, gold=1),
                                 shots=[0])
        assert report.accuracy == {0: 0.0}

    def test_needs_enough_tasks_for_demos(self):
        with pytest.raises(ValueError):
            run_choice_eval(uniform_model(), self.tasks(3), shots=[3])

    def test_tuning_overflow_counted_per_query_and_shot(self):
        # 7 tasks, max shot 1 -> 6 queries, each counted once per shot level
        report = run_choice_eval(favored_byte_model("x"), self.tasks(7),
                                 shots=[0, 1], tuning_seq_len=10)
        assert report.tuning_overflows == 12
        assert report.model_overflows == 0

    def test_model_overflow_counted(self):
        model = favored_byte_model("x")
        model.max_seq_len = 16
        report = run_choice_eval(model, self.tasks(2), shots=[0])
        assert report.model_overflows == 2

    def test_report_serializes(self):
        report = EvalReport(accuracy={0: 0.5}, perplexity_pooled=2.0,
                            perplexity_mean=2.5)
        d = report.to_dict()
        assert d["accuracy"] == {"0": 0.5}
        assert d["perplexity_pooled"] == 2.0
