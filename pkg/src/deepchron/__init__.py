"""Deep chronnectome learning: sliding-window dFC and from-scratch (Bi)LSTM classifiers."""

__version__ = "0.1.0"
