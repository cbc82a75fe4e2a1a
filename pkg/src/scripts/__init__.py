import logging

import config

logging.basicConfig(
    level=config.LOG_LEVEL,
    format=config.LOG_FORMAT,
    datefmt=config.LOG_DATE_FORMAT,
)
logging.getLogger("matplotlib").setLevel(logging.WARNING)
