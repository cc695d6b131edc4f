"""Throughput benchmarking and analytic complexity reports."""

from .harness import benchmark_variants, check_throughput_ordering, measure_throughput, op_count_report

__all__ = ["benchmark_variants", "check_throughput_ordering", "measure_throughput", "op_count_report"]
