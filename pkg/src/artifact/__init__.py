"""Optimal dividend and investment control for a renewal risk model: a
monotone finite-difference solver for the associated integro-differential
equation, policy extraction, Monte Carlo simulation and verification."""

from __future__ import annotations

__version__ = "0.1.0"
