"""Allow running as `python -m fixpool`."""

from .cli import main

main()
