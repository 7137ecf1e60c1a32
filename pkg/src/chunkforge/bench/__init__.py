"""Workload generation, benchmark harness and command line."""
