"""Obstacle problems on grid domains and contact-set stability checks."""
