import logging
import sys

QUIET_LIBRARIES = {
    'matplotlib': logging.ERROR,
    'PIL': logging.WARNING,
    'numba': logging.WARNING,
    'numexpr': logging.WARNING,
}


def setup_logging(level=logging.INFO, log_file=None):
    # Get the root logger
    logger = logging.getLogger()

    if isinstance(level, str):
        name = level.upper()
        if not isinstance(getattr(logging, name, None), int):
            raise ValueError(f"Unsupported log level: {level}")
        level = getattr(logging, name)

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    # Check if handlers are already set (avoid duplicates)
    if not logger.hasHandlers():
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    if log_file and not any(isinstance(h, logging.FileHandler) and h.baseFilename.endswith(str(log_file))
                            for h in logger.handlers):
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)

    # Set logging level for specific libraries
    for name, lib_level in QUIET_LIBRARIES.items():
        logging.getLogger(name).setLevel(lib_level)
