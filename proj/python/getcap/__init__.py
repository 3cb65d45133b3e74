"""Python bindings for the getcap captioning library."""

from ._core import (
    BOS,
    EOS,
    PAD,
    UNK,
    ConfigError,
    ContractError,
    CorruptionError,
    DataError,
    DecodeError,
    DimensionError,
    Error,
    FormatError,
    LookupError,
    NumericError,
    RunConfig,
    attention,
    attribute,
    beam_search,
    caption,
    cider_d,
    config_keys,
    evaluate,
    finetune,
    gradcheck,
    tokenize,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
