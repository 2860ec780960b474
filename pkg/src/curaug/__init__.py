"""Dataset curation, OOD-filtered augmentation, and fairness evaluation.

The toolkit covers the offline data work around training an age estimator
on pooled face datasets: merging per-dataset manifests into a balanced
training pool, planning and applying image augmentations in proportion to
how under-represented each (age, demographic state) cell is, scoring
augmentations against per-class Gaussian models of the training embedding
distribution so implausible mutations can be filtered out, and measuring
how evenly a trained model treats demographic groups at each age.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError

__all__ = ["ConfigError", "DataError", "NumericError", "__version__"]
