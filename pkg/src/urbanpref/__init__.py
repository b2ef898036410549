"""Learns one person's urban preferences from pairwise image votes and
projects them as per-city pixel maps and preference spectra."""

__version__ = "0.1.0"
