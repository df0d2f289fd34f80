"""Training loops built on the lattices, estimators and models."""

from .backtranslation import (
    BtState,
    Seq2SeqConfig,
    TransductionTask,
    bt_backward_phase,
    bt_forward_phase,
    bt_init,
    bt_train,
    build_state,
    evaluate_state,
    exact_match,
    make_toy_data,
    shipped_toy,
)
from .em import EmDivergence, EmResult, HmmLayout, em_fit, negative_log_marginal
from .segmental import fit_segmodel, length_buckets
from .vae import VaeFit, fit_conjugate_vae, posterior_kl
from .vrs import EmptySelectionError, VrsSelector, overlap_labels, sample_masks, vrs_train, vrs_train_step

__all__ = [name for name in dir() if not name.startswith("_")]
