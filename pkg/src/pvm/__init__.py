"""Predictive Vision Model: a pyramid of small predictive nets that learns
online from video and doubles as a supervised object tracker."""

__version__ = "0.1.0"
