"""
Entry point for the magnetic fingerprint positioning CLI.
"""

import logging
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

# config reads the environment at import time.
load_dotenv()

from config import LOG_FORMAT, LOG_LEVEL, load_run_config  # noqa: E402
from errors import EXIT_UNEXPECTED, PositioningError, error_manager, setup_logging  # noqa: E402
from handlers import parse_arguments  # noqa: E402


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code (0 ok, 2 input, 3 data quality, 4 no match)."""
    try:
        args = parse_arguments(argv, load_run_config)
    except SystemExit as exit_request:
        # argparse reports usage errors (unknown flags, bad values) this way.
        code = exit_request.code
        return code if isinstance(code, int) else EXIT_UNEXPECTED
    except (PositioningError, FileNotFoundError, IsADirectoryError) as error:
        print(error_manager.to_user_message(error), file=sys.stderr)
        return error_manager.exit_code(error)

    logger = setup_logging(level="DEBUG" if args.verbose else LOG_LEVEL, format_string=LOG_FORMAT)
    logger.debug("Running %s", args.command)

    try:
        return int(args.handler(args))
    except (PositioningError, FileNotFoundError, IsADirectoryError) as error:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(error_manager.to_user_message(error), file=sys.stderr)
        return error_manager.exit_code(error)
    except Exception:
        logging.getLogger(__name__).exception("Unexpected error in %s", args.command)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
