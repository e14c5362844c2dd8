"""Tests for strata-iptw package."""
