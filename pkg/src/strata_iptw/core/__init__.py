"""Core modules for strata-iptw."""
