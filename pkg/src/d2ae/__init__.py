"""Identity distilling-and-dispelling autoencoder at desk scale."""

__version__ = "0.1.0"
