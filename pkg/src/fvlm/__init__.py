"""Future-vector enhanced LSTM language models.

Training and evaluation toolkit for LSTM LMs that predict, alongside the
next word, an embedding of the whole sentence suffix (the "future vector"),
plus the two evaluation protocols built on them: greedy sequence
continuation scored by BLEU, and speech-recognition n-best rescoring scored
by WER.
"""

__version__ = "0.1.0"
