"""Lifecycle cost simulation and policy search for AI inference datacenters."""

from __future__ import annotations

__version__ = "0.1.0"
