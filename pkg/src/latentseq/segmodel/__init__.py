"""Neural segmental data-to-text model with constrained decoding."""

from .data import (
    COPY_SLOTS,
    SLOT_VALUES,
    SLOTS,
    Example,
    RecordSet,
    Utterance,
    Vocab,
    corpus_vocab,
    read_jsonl,
    synth_data,
    to_example,
    write_jsonl,
)
from .model import (
    Batch,
    SegModel,
    SegModelConfig,
    StepModel,
    batch_examples,
    encode,
    make_batch,
    score_tables,
    segment_logprob,
    train_loss,
)
from .model import encode_frozen, vrs_loglik
from .decode import DecodeFailure, DecodeResult, constrained_decode, vrs_select_decode
from .evaluate import (
    boundary_f1,
    evaluate_segmodel,
    expected_segment_gap,
    faithful_records,
    record_usage,
    segmentation_f1,
)
from .checkpoint import CheckpointError, load_model, load_tensors, save_model, save_tensors
from .inspect import alignment_trace, format_trace

__all__ = [name for name in dir() if not name.startswith("_")]
