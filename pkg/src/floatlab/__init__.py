"""Desk-scale lab for conditional adversarial training: noisy-weight
conditioning with dual batch norm, PGD/FGSM attacks, sparse and slimmable
training variants, and closed-form hardware cost models."""

__version__ = "0.1.0"
