"""
Logger Setup Script
File: utils/utils_logger.py

Configures the shared loguru logger for every module in the project.

Features:
- Logs to logs/dbgnn_log.log and to stderr.
- Log level from the DBGNN_LOG_LEVEL environment variable (default INFO).
- Sanitizes messages so user names and local paths never reach the log.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import getpass
import os
import pathlib
import sys
from typing import Mapping, Any

# Imports from external packages
from dotenv import load_dotenv
from loguru import logger

#####################################
# Default Configurations
#####################################

load_dotenv()

LOG_FOLDER: pathlib.Path = pathlib.Path("logs")
LOG_FILE: pathlib.Path = LOG_FOLDER.joinpath("dbgnn_log.log")
LOG_LEVEL: str = os.getenv("DBGNN_LOG_LEVEL", "INFO").upper()

#####################################
# Helper Functions
#####################################


def sanitize_message(record: Mapping[str, Any]) -> str:
    """Remove personal/identifying information from log messages and escape braces."""
    message = record["message"]

    try:
        message = message.replace(getpass.getuser(), "USER")
    except Exception:
        pass

    # Longest prefix first: cwd usually sits under home
    try:
        message = message.replace(str(pathlib.Path.cwd()), "PROJECT_ROOT")
    except Exception:
        pass
    try:
        message = message.replace(str(pathlib.Path.home()), "~")
    except Exception:
        pass

    message = message.replace("\\", "/")

    # Loguru would read braces as format fields
    return message.replace("{", "{{").replace("}", "}}")


def format_sanitized(record: Mapping[str, Any]) -> str:
    """Formatter producing 'time | level | message' with a sanitized message."""
    message = sanitize_message(record)
    time_str = record["time"].strftime("%Y-%m-%d %H:%M:%S")
    level_name = record["level"].name
    return f"{time_str} | {level_name} | {message}\n"


def get_log_file_path() -> pathlib.Path:
    """Return the path to the log file."""
    return LOG_FILE


#####################################
# Configure Sinks
#####################################

try:
    LOG_FOLDER.mkdir(exist_ok=True)
except Exception as e:
    print(f"Error creating log folder: {e}", file=sys.stderr)

try:
    logger.remove()
    logger.add(
        LOG_FILE,
        level=LOG_LEVEL,
        rotation="50 kB",
        retention=1,
        compression=None,
        enqueue=True,  # worker threads log too
        format=format_sanitized,
    )
    logger.add(
        sys.stderr,
        level=LOG_LEVEL,
        enqueue=True,
        format=format_sanitized,
    )
    logger.debug(f"Logging to file: {LOG_FILE} at level {LOG_LEVEL}")
except Exception as e:
    logger.error(f"Error configuring logger to write to file: {e}")
