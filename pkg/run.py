#!/usr/bin/env python3
"""
SAFE-D 벤치 실행 스크립트
"""

import sys

from app.main import main

if __name__ == "__main__":
    sys.exit(main())
