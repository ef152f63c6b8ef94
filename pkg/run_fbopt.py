"""
Main interface for user/developer of fbopt.

Utility to run scenarios, build certificates, train perception models and sweep parameters.

Requires fbopt to be installed.
"""

import sys

from fbopt import parse_args_and_start


if __name__ == '__main__':
    sys.exit(parse_args_and_start(sys.argv[1:]))
