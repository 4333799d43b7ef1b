#!/usr/bin/env python
"""gae_bench command-line utility: run experiments and check reports."""
import sys


def main():
    """Run benchmark commands."""
    try:
        from graph_ae.cli import cli
    except ImportError as exc:
        raise ImportError(
            "Couldn't import graph_ae. Are you sure numpy, scipy, click and "
            "pydantic are installed and available on your PYTHONPATH "
            "environment variable? Did you forget to activate a virtual "
            "environment?"
        ) from exc
    cli.main(args=sys.argv[1:], prog_name='manage.py')


if __name__ == '__main__':
    main()
