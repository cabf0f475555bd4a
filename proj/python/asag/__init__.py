"""Short-answer grading with multiway attention."""

from ._core import (
    AnswerPair,
    AsagError,
    ConfigError,
    DataError,
    LrBaseline,
    MaskError,
    NumericError,
    ShapeError,
    Vocabulary,
    accuracy,
    auc,
    build_vocab,
    evaluate,
    fit_lr_baseline,
    generate_dataset,
    generate_splits,
    grade,
    gradcheck,
    lr_features,
    read_dataset,
    run_cli,
    tokenize,
    train,
    write_dataset,
)

__all__ = [
    "AnswerPair",
    "AsagError",
    "ConfigError",
    "DataError",
    "LrBaseline",
    "MaskError",
    "NumericError",
    "ShapeError",
    "Vocabulary",
    "accuracy",
    "auc",
    "build_vocab",
    "evaluate",
    "fit_lr_baseline",
    "generate_dataset",
    "generate_splits",
    "grade",
    "gradcheck",
    "lr_features",
    "read_dataset",
    "run_cli",
    "tokenize",
    "train",
    "write_dataset",
]
