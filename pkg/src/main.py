# fictitious-lq/src/main.py
"""
Fictitious LQ - Main entry point.
Parses the subcommand and runs it: python -m src.main <solve|sweep|verify|oracle|mc|fixtures> ...
"""
import logging
import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import config
from src.cli.app import parse_args
from src.cli.commands import run_command

logging.basicConfig(
    level=logging.DEBUG if config.debug else logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)]
)

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit status."""
    args = parse_args(argv)
    logger.debug(f"Running {args.command} with {vars(args)}")
    return run_command(args.command, args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Stopped by user")
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        sys.exit(1)
