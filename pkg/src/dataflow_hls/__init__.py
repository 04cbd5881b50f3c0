"""Partition loop kernels into decoupled dataflow stages and compare their
timing against a monolithic statically scheduled engine."""

from .bench import KernelSpec, generate, kernel_catalog, random_program
from .cdfg import build_cdfg, condense_and_sort, find_sccs
from .ir import LatencyTable, MemoryImage, interpret, parse_ir, print_ir, validate
from .memory import MemConfig, MemorySystem, coalesce
from .partition import build_pipeline, check_plan, partition
from .sim import compare, compute_ii, simulate_monolithic, simulate_pipeline

__all__ = [
    "KernelSpec", "LatencyTable", "MemConfig", "MemoryImage", "MemorySystem",
    "build_cdfg", "build_pipeline", "check_plan", "coalesce", "compare", "compute_ii",
    "condense_and_sort", "find_sccs", "generate", "interpret", "kernel_catalog",
    "parse_ir", "partition", "print_ir", "random_program", "simulate_monolithic",
    "simulate_pipeline", "validate",
]
