"""Version information for longdoc-retrieval package."""

__version__ = "0.3.0"  # Python package version

# Component licenses
__license__ = "MIT"


def get_version_info():
    """Return version information as a dictionary."""
    return {
        "version": __version__,
        "license": __license__,
    }
