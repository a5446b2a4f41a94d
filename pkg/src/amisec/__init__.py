"""Two-level AMI security: randomized-order encryption and OCSVM node authentication."""
__version__ = "0.1.0"
