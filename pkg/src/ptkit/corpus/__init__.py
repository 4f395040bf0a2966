from .bpe import BpeModel, learn_bpe, load_bpe_model, save_bpe_model, tokenize_bpe
from .filtering import Document, FilterStats, filter_docs, strip_markup
from .langid import LangIdModel, predict_lang, train_langid

__all__ = [
    "BpeModel",
    "Document",
    "FilterStats",
    "LangIdModel",
    "filter_docs",
    "learn_bpe",
    "load_bpe_model",
    "predict_lang",
    "save_bpe_model",
    "strip_markup",
    "tokenize_bpe",
    "train_langid",
]
