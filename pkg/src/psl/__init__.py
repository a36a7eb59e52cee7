"""Protein-as-second-language toolkit.

Corpus construction (GO pruning, redundancy removal, QA generation),
query-adaptive exemplar retrieval and evaluation for protein
question answering with frozen LLMs.
"""

__version__ = "0.1.0"
