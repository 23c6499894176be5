"""Latent-factor models for networks with nodal attributes.

Modules
-------
relational_data : network, attribute and covariate containers and CSV I/O
lowrank         : truncated SVD, additive/multiplicative splits, scree profiles
links           : truncation regions linking latent to observed relations
ame             : MCMC for the additive-and-multiplicative-effects model
dependence      : likelihood-ratio test of attribute/factor independence
experiments     : power study and cross-validation harnesses
cli             : the ``netattr`` command
"""

__version__ = "0.1.0"
