"""Goal-state synthesis toolkit."""
