"""Query-metered synonym-substitution attacks on text classifiers, with a
substitute word-importance model learned on a similar-domain corpus."""

__version__ = "0.1.0"
