#!/usr/bin/env python3
"""
advgame command line

Subcommands live one module per file in commands/; every module exposes
`setup(app)` and is discovered at start-up.
"""

import argparse
import importlib
import logging
import sys
from pathlib import Path
from typing import List, Optional

import config
from errors import AdvGameError

COMMANDS_DIR = Path(__file__).resolve().parent / "commands"


class AdvGameApp:
    def __init__(self):
        self.parser = argparse.ArgumentParser(prog=config.APP_NAME, description=config.APP_DESCRIPTION)
        self.parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
        self.parser.add_argument("--version", action="version", version=f"{config.APP_NAME} {config.APP_VERSION}")
        self.subparsers = self.parser.add_subparsers(dest="command", metavar="COMMAND")
        self.loaded: List[str] = []

    def add_command(self, name: str, handler, help: str) -> argparse.ArgumentParser:
        sub = self.subparsers.add_parser(name, help=help, description=help)
        sub.set_defaults(func=handler)
        return sub

    def load_commands(self):
        """Load all command modules from the commands directory"""
        for file in sorted(COMMANDS_DIR.glob("*.py")):
            if file.name.startswith("_"):
                continue  # Skip helper modules
            try:
                module = importlib.import_module(f"commands.{file.stem}")
                module.setup(self)
            except Exception:
                logging.exception(f"Failed to load {file.stem}")
                continue
            self.loaded.append(file.stem)
        return self

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.debug or config.DEBUG_MODE else logging.INFO,
            format="%(asctime)s %(levelname)s %(message)s",
        )
        if not getattr(args, "func", None):
            self.parser.print_help()
            return 2
        try:
            return args.func(args) or 0
        except AdvGameError as e:
            logging.error(f"{type(e).__name__}: {e}")
            logging.debug("traceback", exc_info=True)
            return e.exit_code
        except OSError as e:
            logging.error(f"I/O failure: {e}")
            logging.debug("traceback", exc_info=True)
            return 4


def main(argv: Optional[List[str]] = None) -> int:
    return AdvGameApp().load_commands().run(argv)


if __name__ == "__main__":
    sys.exit(main())
