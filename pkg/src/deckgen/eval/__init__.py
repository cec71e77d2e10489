"""Evaluation: quantitative metrics and judge-based scoring."""

from deckgen.eval.judge import (
    DIMENSIONS,
    EvalReport,
    JudgeVerdict,
    UnparseableVerdict,
    aggregate_verdicts,
    judge_presentation,
)
from deckgen.eval.metrics import (
    DegenerateCovariance,
    RougeScore,
    SizeTooSmall,
    ZeroVariance,
    fid,
    fit_feature_dim,
    fleiss_kappa,
    pearson,
    rouge_l,
    spearman,
    sr_weighted,
    success_rate,
    tokenize,
)

__all__ = [
    "DIMENSIONS",
    "DegenerateCovariance",
    "EvalReport",
    "JudgeVerdict",
    "RougeScore",
    "SizeTooSmall",
    "UnparseableVerdict",
    "ZeroVariance",
    "aggregate_verdicts",
    "fid",
    "fit_feature_dim",
    "fleiss_kappa",
    "judge_presentation",
    "pearson",
    "rouge_l",
    "spearman",
    "sr_weighted",
    "success_rate",
    "tokenize",
]
