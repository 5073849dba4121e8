"""
Longitudinal patient similarity: DTW alignment variants, distance features with imputation,
logistic regression and leave-one-patient-out evaluation
"""

__version__ = "0.1.0"
