# Copyright 2026 The CMTA Authors
# SPDX-License-Identifier: Apache-2.0
"""Event-guided multi-frame video deblurring."""

from ._cmta import *  # noqa: F401,F403
from ._cmta import __doc__  # noqa: F401
