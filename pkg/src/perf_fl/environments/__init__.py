"""Performative distribution maps and their analytic oracles."""
from .base import (
    ClientStreams,
    ContaminatedClient,
    Environment,
    GaussianContaminant,
    Sample,
    SampleBatch,
    analytic_loss_available,
    draw_batch,
    estimate_f_hat,
    performative_loss,
    strategic_response,
)
from .classification import StaticPoolClassification, StrategicClassification
from .closed_form import ClosedFormOptima, closed_form_optima, numeric_performative_optimum
from .pricing import AppendixLinearContribution, ContributionPricing, GaussianDemandPricing
from .regression import ContributionRegression, HousePricingRegression

__all__ = [
    "ClientStreams",
    "ContaminatedClient",
    "Environment",
    "GaussianContaminant",
    "Sample",
    "SampleBatch",
    "analytic_loss_available",
    "draw_batch",
    "estimate_f_hat",
    "performative_loss",
    "strategic_response",
    "StaticPoolClassification",
    "StrategicClassification",
    "ClosedFormOptima",
    "closed_form_optima",
    "numeric_performative_optimum",
    "AppendixLinearContribution",
    "ContributionPricing",
    "GaussianDemandPricing",
    "ContributionRegression",
    "HousePricingRegression",
]
