from __future__ import annotations

import platform
from dataclasses import dataclass
from pathlib import Path

from .__version__ import VERSION

CONFIG_PATH = Path.home() / '.config/r2if-kit.toml'

# Output grammar, bit-exact
REASON_OPEN, REASON_CLOSE = '<reason>', '</reason>'
TOOL_OPEN, TOOL_CLOSE = '<tool>', '</tool>'
REJECTION_STRING = 'None of function can be used'

# Annotation sentinels of the ground-truth document (compared case-insensitively)
NO_SPEC = 'no spec'
NO_MODIFY = 'no modify'
ANNOTATION_MAX_WORDS = 15

TASK_CATEGORIES = ('simple', 'multiple', 'parallel', 'parallel_multiple', 'irrelevance')

STUDENT_KEY_ENV = 'R2IF_STUDENT_API_KEY'
EMBED_KEY_ENV = 'R2IF_EMBED_API_KEY'

# Student collapse threshold for the validity check
DEGENERATE_RATE = 0.05

VERSION_HEADER = 'X-R2IF-Version'

IS_WINDOWS = platform.system() == 'Windows'


@dataclass
class GlobalConfig:
    debug: bool
    color: bool


GLOBAL_CFG = GlobalConfig(debug=False, color=True)
