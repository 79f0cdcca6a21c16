"""Detection of vulnerability-indicating issue reports in IoT project trackers.

Two pipelines share this package: classical classifiers (GNB, SVM, RF, LR)
over NLP featurizations evaluated with 10-fold cross-validation plus an LLM
gate, and a keyword-surrogate pipeline (RAKE mining, masked-token corpus
generation, masked-prediction evaluation).
"""

__version__ = "0.1.0"

from vulnsieve.issue_store import Issue, IssueFilters, Label, LabeledIssue, LabelSource

__all__ = [
    "Issue",
    "IssueFilters",
    "Label",
    "LabeledIssue",
    "LabelSource",
    "__version__",
]
