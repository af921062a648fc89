"""Multi-branch image restoration for unknown degradation factors.

A single network with a shared dual-residual stem and one input/output
branch pair per degradation factor (rain streaks, motion blur, JPEG
artifacts, haze). Used directly it restores a specified factor; used
recurrently, feeding each branch pair's output into the next pair's
input, it restores an image without being told which factor it has.
"""

from .factors import Factor, DEFAULT_RESTORE_ORDER, SYNTHESIS_ORDER
from .network import ModelConfig, MultiBranchNet, mbn_restore, rmbn_restore, param_report

__all__ = [
    "Factor",
    "DEFAULT_RESTORE_ORDER",
    "SYNTHESIS_ORDER",
    "ModelConfig",
    "MultiBranchNet",
    "mbn_restore",
    "rmbn_restore",
    "param_report",
]

__version__ = "0.1.0"
