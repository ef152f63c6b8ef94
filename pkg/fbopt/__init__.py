# these are exposed to user
from .interface import parse_args_and_start  # noqa: F401
from .harness import run_closed_loop  # noqa: F401
from .scenario import load_scenario  # noqa: F401
