from hypy_utils.logging_utils import setup_logger

log = setup_logger()
