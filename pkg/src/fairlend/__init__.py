"""Fair-lending simulation: biased synthetic applicants, logistic scoring,
threshold interventions, and profit/fairness tradeoff experiments."""

__version__ = "0.1.0"
