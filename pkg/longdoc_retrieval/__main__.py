"""
Entry point for running longdoc_retrieval module directly.
"""

from longdoc_retrieval.cli import main
import sys

if __name__ == "__main__":
    sys.exit(main())
