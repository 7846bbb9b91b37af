"""Main entry point: python -m vhs2hd.main <command> [...]"""

import logging
import os
import sys

import pyroscope

from vhs2hd.cli import main


def init_pyroscope() -> None:
    """Continuous profiling, only when PYROSCOPE_SERVER is set."""
    server = os.getenv("PYROSCOPE_SERVER", "").strip()
    if not server:
        return
    try:
        app_name = os.getenv("PYROSCOPE_APPLICATION_NAME", "vhs2hd")
        pyroscope.configure(
            application_name=app_name,
            server_address=server,
            detect_subprocesses=True,
            oncpu=True,
        )
        print("Pyroscope: app=%s, server=%s" % (app_name, server), file=sys.stderr)
    except Exception as e:
        print("Pyroscope init error: %s" % e, file=sys.stderr)


if __name__ == "__main__":
    # Sync logging for config load (runs before the event loop; aiologger needs one).
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    init_pyroscope()
    sys.exit(main())
