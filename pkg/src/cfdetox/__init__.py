"""Counterfactual debiasing for lexicon-biased toxicity classifiers.

Train a three-branch classifier on (sentence, bias-tokens) inputs, then
predict at test time by subtracting the bias tokens' direct score shift
from the total score shift.
"""

__version__ = "0.1.0"
