from src.cli import cli
from src.utils.log import logger

if __name__ == "__main__":
    logger.debug("Starting the experiment runner")
    cli()
