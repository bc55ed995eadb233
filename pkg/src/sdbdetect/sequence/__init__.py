"""GMMs, left-to-right class HMMs, the event bigram model and Viterbi decoding."""

from .decode import DecodeConfig, DecodeError, Recognizer, tune_decode, viterbi, viterbi_decode
from .gmm import Gmm, fit_gmm, gmm_loglik
from .hmm import STATE_COUNTS, HmmClassModel, train_tandem
from .lm import BigramLm, ClassPriors, estimate_priors, train_bigram

__all__ = [
    "BigramLm", "ClassPriors", "DecodeConfig", "DecodeError", "Gmm", "HmmClassModel",
    "Recognizer", "STATE_COUNTS", "estimate_priors", "fit_gmm", "gmm_loglik", "train_bigram",
    "train_tandem", "tune_decode", "viterbi", "viterbi_decode",
]
