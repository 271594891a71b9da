"""Likelihood-based evaluation: few-shot choice classification and
response-only perplexity.

Choice classification scores each candidate answer string's conditional
log-likelihood under the model and predicts the argmax. Perplexity is the
exponential of the mean negative log-likelihood, computed over response
tokens only (the question prompt never enters the sum).

Models are consumed through a narrow protocol: ``model.logits(ids)``
returning a [T, V] array, plus a ``max_seq_len`` attribute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tokenizer import ByteTokenizer

_DEFAULT_TOKENIZER = ByteTokenizer()

FEWSHOT_HEADER_V03 = (
    "Below is a combination of instructions explaining the task and contextual "
    "inputs. Write a response that adequately meets the request."
)

QUESTION_BODY = (
    "Write a response to answer the following question.\n"
    "\n"
    "### Question:\n"
    "{question}\n"
    "\n"
    "### Response:\n"
)


@dataclass(frozen=True)
class ChoiceTask:
    """A classification item: context fields, answer choices, gold index."""

    instruction: str
    fields: dict
    choices: tuple
    gold: int
    version: str = "v0.3"
    constraints: str | None = None
    answer_label: str = "Response"

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) < 2:
            raise ValueError("a choice task needs at least 2 choices")
        if not 0 <= self.gold < len(self.choices):
            raise ValueError(f"gold index {self.gold} out of range")
        if self.version not in ("v0.2", "v0.3"):
            raise ValueError(f"unknown prompt version {self.version!r}")


@dataclass(frozen=True)
class FewShotSpec:
    """k solved demonstrations to prepend to the query."""

    k: int
    demonstrations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "demonstrations", tuple(self.demonstrations))
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.k > len(self.demonstrations):
            raise ValueError(f"k={self.k} exceeds the {len(self.demonstrations)} demonstrations provided")


@dataclass(frozen=True)
class PerplexityItem:
    question: str
    response: str

    def __post_init__(self):
        if not self.response:
            raise ValueError("response must be non-empty")


@dataclass(frozen=True)
class QuestionTemplate:
    """Question prompt for perplexity items; body ends at the response header."""

    body: str = QUESTION_BODY

    def render(self, question: str) -> str:
        return self.body.replace("{question}", question)


@dataclass
class EvalReport:
    accuracy: dict = field(default_factory=dict)          # shot count -> accuracy
    tuning_overflows: int = 0
    model_overflows: int = 0
    perplexity_pooled: float | None = None
    perplexity_mean: float | None = None
    item_perplexities: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": {str(k): v for k, v in self.accuracy.items()},
            "tuning_overflows": self.tuning_overflows,
            "model_overflows": self.model_overflows,
            "perplexity_pooled": self.perplexity_pooled,
            "perplexity_mean": self.perplexity_mean,
        }


# -- few-shot prompt assembly -------------------------------------------------


def _field_lines(task: ChoiceTask) -> str:
    return "\n".join(f"{label}: {value}" for label, value in task.fields.items())


def _v02_block(task: ChoiceTask, answer: str | None) -> str:
    lines = _field_lines(task) + f"\n{task.answer_label}: "
    return lines + answer if answer is not None else lines


def _v03_block(task: ChoiceTask, answer: str | None) -> str:
    block = (
        "### Instructions:\n"
        f"{task.instruction}\n"
        "\n"
        "Choose your output from the following:\n"
        + "\n".join(task.choices)
        + "\n\n### Input:\n"
        f"{_field_lines(task)}\n"
        "\n"
        "### Response:\n"
    )
    return block + answer if answer is not None else block


def assemble_fewshot_prompt(task: ChoiceTask, spec: FewShotSpec,
                            template_version: str | None = None) -> str:
    """v0.2: instruction + constraints + solved demos + open query.
    v0.3: repeated Instructions/Input/Response blocks, final response empty."""
    version = template_version or task.version
    demos = spec.demonstrations[: spec.k]
    if version == "v0.2":
        parts = [task.instruction]
        if task.constraints:
            parts.append(task.constraints)
        for demo in demos:
            parts.append(_v02_block(demo, demo.choices[demo.gold]))
        parts.append(_v02_block(task, None))
        return "\n\n".join(parts)
    if version == "v0.3":
        parts = [FEWSHOT_HEADER_V03]
        for demo in demos:
            parts.append(_v03_block(demo, demo.choices[demo.gold]))
        parts.append(_v03_block(task, None))
        return "\n\n".join(parts)
    raise ValueError(f"unknown prompt version {version!r}")


# -- likelihood scoring --------------------------------------------------------


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    z = rows - rows.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def score_continuation(model, prompt: str, continuation: str,
                       tokenizer: ByteTokenizer | None = None) -> float:
    """Summed log-likelihood of the continuation tokens given the prompt.

    Overlong inputs are left-truncated, preserving the end of the prompt
    and the whole continuation.
    """
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    cont = tokenizer.encode(continuation).ids
    if not cont:
        raise ValueError("continuation encodes to zero tokens")
    ids = [tokenizer.bos_id] + tokenizer.encode(prompt).ids + cont
    max_len = getattr(model, "max_seq_len", None)
    if max_len is not None and len(ids) > max_len:
        if len(cont) + 1 > max_len:
            raise ValueError(f"continuation of {len(cont)} tokens cannot fit the {max_len}-token context")
        ids = ids[-max_len:]
    logits = np.asarray(model.logits(ids[:-1]), dtype=np.float64)
    logp = _log_softmax(logits)
    rows = logp[-len(cont):]
    return float(rows[np.arange(len(cont)), cont].sum())


def classify_by_likelihood(model, task: ChoiceTask, spec: FewShotSpec,
                           tokenizer: ByteTokenizer | None = None,
                           length_normalize: bool = False) -> int:
    """Argmax over per-choice continuation scores; ties go to the lowest index."""
    prompt = assemble_fewshot_prompt(task, spec)
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    scores = []
    for choice in task.choices:
        s = score_continuation(model, prompt, choice, tokenizer)
        if length_normalize:
            s /= len(tokenizer.encode(choice).ids)
        scores.append(s)
    return int(np.argmax(scores))


# -- perplexity ---------------------------------------------------------------


def response_perplexity(model, item: PerplexityItem,
                        prompt_template: QuestionTemplate | None = None,
                        tokenizer: ByteTokenizer | None = None) -> float:
    """exp of the mean negative log-likelihood over response tokens only."""
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    template = prompt_template or QuestionTemplate()
    prompt = template.render(item.question)
    n = len(tokenizer.encode(item.response).ids)
    total_logp = score_continuation(model, prompt, item.response, tokenizer)
    return math.exp(-total_logp / n)


def corpus_perplexity(model, items, prompt_template: QuestionTemplate | None = None,
                      tokenizer: ByteTokenizer | None = None) -> tuple[float, EvalReport]:
    """Pooled aggregate exp(total response NLL / total response tokens)."""
    if not items:
        raise ValueError("corpus_perplexity requires at least one item")
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    template = prompt_template or QuestionTemplate()
    total_nll = 0.0
    total_tokens = 0
    per_item = []
    for item in items:
        prompt = template.render(item.question)
        n = len(tokenizer.encode(item.response).ids)
        logp = score_continuation(model, prompt, item.response, tokenizer)
        total_nll += -logp
        total_tokens += n
        per_item.append(math.exp(-logp / n))
    pooled = math.exp(total_nll / total_tokens)
    report = EvalReport(
        perplexity_pooled=pooled,
        perplexity_mean=float(np.mean(per_item)),
        item_perplexities=per_item,
    )
    return pooled, report


# -- batch choice evaluation ----------------------------------------------------


def run_choice_eval(model, tasks, shots, tokenizer: ByteTokenizer | None = None,
                    tuning_seq_len: int | None = None) -> EvalReport:
    """Evaluate k-shot accuracy for each k in ``shots``.

    The first max(shots) tasks serve as demonstrations and are excluded
    from scoring. Overflow counters mirror inputs that exceeded the tuning
    length or the model context length before truncation.
    """
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    shots = sorted(set(shots))
    max_k = max(shots)
    if len(tasks) <= max_k:
        raise ValueError(f"need more than {max_k} tasks to run {max_k}-shot evaluation")
    demos = tuple(tasks[:max_k])
    queries = tasks[max_k:]
    report = EvalReport()
    max_len = getattr(model, "max_seq_len", None)
    for k in shots:
        spec = FewShotSpec(k=k, demonstrations=demos[:k])
        correct = 0
        for task in queries:
            prompt_len = 1 + len(tokenizer.encode(assemble_fewshot_prompt(task, spec)).ids)
            longest = max(len(tokenizer.encode(c).ids) for c in task.choices)
            if tuning_seq_len is not None and prompt_len + longest > tuning_seq_len:
                report.tuning_overflows += 1
            if max_len is not None and prompt_len + longest > max_len:
                report.model_overflows += 1
            if classify_by_likelihood(model, task, spec, tokenizer) == task.gold:
                correct += 1
        report.accuracy[k] = correct / len(queries)
    return report
