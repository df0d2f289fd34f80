"""Variational objectives, gradient estimators and anti-collapse schedules."""

from .bench import (
    CSV_COLUMNS,
    ESTIMATORS,
    BenchRow,
    MissingOracleError,
    estimator_bench,
    gumbel_argmax_pvalue,
    read_bench_csv,
    write_bench_csv,
)
from .gradients import (
    EstimatorReport,
    MovingAverageBaseline,
    combine_reports,
    pathwise_grad,
    per_sample_grads,
    score_function_grad,
)
from .objectives import (
    GIGAWORD_ALPHA,
    GIGAWORD_EPS_FRACTION,
    WIKIBIO_ALPHA,
    WIKIBIO_EPS_FRACTION,
    cmi_budget,
    cmi_objective,
    elbo,
    prior_mc_bound,
    ratio_penalty,
    soft_select_logprob,
    vrs_bound,
    vrs_objective,
)
from .schedules import (
    AnnealSchedule,
    bow_loss,
    free_bits_kl,
    kl_anneal_weight,
    scheduled_sampling_p,
    word_dropout,
)
from .toys import CAT3, CAT5, GAUSS, SHIPPED_TOYS, CategoricalToy, GaussianToy, LinearGaussianToy

__all__ = [name for name in dir() if not name.startswith("_")]
