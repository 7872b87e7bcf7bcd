"""Task recognition for an instrumented rotary power tool.

Synthetic robot and human sensor runs, windowed statistical features, a small
numpy classifier with robot pretraining and human fine-tuning, and the
evaluation protocols that compare the two training regimes.
"""

from .core import (
    CHANNEL_NAMES,
    FEATURE_NAMES,
    N_CHANNELS,
    N_CLASSES,
    N_FEATURES,
    ChannelId,
    ContractError,
    SensorRun,
    Source,
    SplitMode,
    SplitSpec,
    Stat,
    TaskLabel,
    Window,
    feature_index,
)

__version__ = "0.1.0"
