"""tripeer: three peer encoders with EMA teachers, trained on a labeled
source domain and adapted to an unlabeled target domain via cluster pseudo
labels, cyclic soft-label distillation, multi-similarity metric learning,
and batch nuclear-norm maximization."""

__version__ = "0.1.0"
