"""Tests for strata_iptw.services."""
