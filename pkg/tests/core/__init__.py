"""Tests for strata_iptw.core."""
