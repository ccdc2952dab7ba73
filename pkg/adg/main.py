"""
Entry point for the ADG command line
"""
import logging
import sys

from adg.api import cli
from adg.config import settings

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


def main() -> int:
    logger.debug(f"{settings.APP_NAME} {settings.APP_VERSION}")
    return cli.main()


if __name__ == "__main__":
    sys.exit(main())
