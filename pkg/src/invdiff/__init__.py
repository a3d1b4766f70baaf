"""Anomaly detection by few-step diffusion latent inversion.

Train an epsilon-prediction network on normal feature maps, map test
samples to the terminal latent with deterministic DDIM inversion, and
score anomalies from the latent's deviation under the standard-normal
prior. Includes reconstruction and Mahalanobis baselines, detection /
localization metrics, a synthetic feature benchmark, and a CLI harness.
"""

__version__ = "0.1.0"
