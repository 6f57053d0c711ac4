"""domainbench: deterministic synthesis and scoring of multi-domain
object-detection benchmarks, plus the forward math for domain-aware prompt
embedding fusion."""

__version__ = "0.1.0"

from . import dataset, embed, errors, evaluation, imaging, prompts, tensorio  # noqa: F401
