"""
Patient Similarity Toolkit
Compares snapshot features with DTW-based trajectory similarity for progression prediction
"""

import logging
import sys

from dotenv import load_dotenv

from patsim.cli import main as cli_main

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


def main():
    """Main function to run the toolkit"""
    try:
        status = cli_main()
    except KeyboardInterrupt:
        logger.error("Interrupted")
        status = 130
    sys.exit(status)


if __name__ == "__main__":
    main()
