"""Deployment-condition ablations: degradations, misalignment, attacks, energy."""

from muxdetect.harness.energy import EnergyModel, EnergyReport, energy_report
from muxdetect.harness.perturb import Perturbation, perturb

__all__ = ["EnergyModel", "EnergyReport", "energy_report", "Perturbation", "perturb"]
