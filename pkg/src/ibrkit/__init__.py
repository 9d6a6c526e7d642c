"""Admittance identification toolkit for heterogeneous inverter-based resources.

Pipeline: analytical dq-admittance datasets for grid-following and
grid-forming inverters -> K-means clustering on |Y_dd| frequency profiles
-> one feed-forward network per cluster -> few-shot cluster assignment and
admittance prediction for unseen devices.
"""

from ibrkit.ssmodel import (
    CompositeSystem,
    Interconnection,
    StateSpaceBlock,
    compose,
    frequency_response,
    stack_blocks,
)

__all__ = [
    "CompositeSystem",
    "Interconnection",
    "StateSpaceBlock",
    "compose",
    "frequency_response",
    "stack_blocks",
]

__version__ = "0.1.0"
