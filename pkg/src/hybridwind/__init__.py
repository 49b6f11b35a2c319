"""Hybrid physics/data-driven wind-turbine power model."""

__version__ = "0.1.0"
