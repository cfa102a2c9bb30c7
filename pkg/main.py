import sys

from dotenv import load_dotenv

from respiratory_sed import run_command
from respiratory_sed.logging_config import configure_logging

load_dotenv()

configure_logging()

raise SystemExit(run_command(sys.argv[1:]))
