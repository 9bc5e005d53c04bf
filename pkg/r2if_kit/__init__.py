from __future__ import annotations

from . import constants
from .domain import ActionList, Instance, RewardBreakdown, ToolCall, canonical_value
from .errors import R2ifError
from .models import RewardConfig
from .parser import parse_response, validate_format
from .reward import composite_reward

__version__ = constants.VERSION
