"""Allow running battlesim as a module: python -m battlesim."""

from battlesim.cli import main

if __name__ == "__main__":
    main()
