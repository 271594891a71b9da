"""Desk-scale instruction tuning pipeline.

Byte-level data pipeline, a small decoder-only transformer with reverse-mode
autodiff, low-rank adapter tuning, and likelihood/perplexity evaluation.
"""

from .autodiff import Tensor, backward
from .tokenizer import ByteTokenizer, TokenSequence, BOS, EOS, PAD, VOCAB_SIZE
from .records import (
    InstructionRecord,
    DatasetManifest,
    load_records,
    save_records,
    filter_by_category,
    convert_typo_pair,
    convert_qa_pair,
    dataset_stats,
)
from .prompts import PromptTemplate, render_prompt, template_for
from .model import ModelConfig, DecoderModel, ContextOverflowError, load_checkpoint
from .lora import LoraConfig, LoraAdapter, inject, trainable_param_count, merge_all, unmerge_all
from .training import TrainConfig, TrainingBatch, AdamW, build_batch, train_step, train, pretrain
from .evaluation import (
    ChoiceTask,
    FewShotSpec,
    PerplexityItem,
    QuestionTemplate,
    EvalReport,
    assemble_fewshot_prompt,
    score_continuation,
    classify_by_likelihood,
    response_perplexity,
    corpus_perplexity,
    run_choice_eval,
)
from .sampling import GenerationParams, GenerationResult, apply_repetition_penalty, generate

__version__ = "0.1.0"
