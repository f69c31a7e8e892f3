"""Entry point for running ghoststat as a module: python -m ghoststat"""
from ghoststat.cli import main

if __name__ == "__main__":
    main()
