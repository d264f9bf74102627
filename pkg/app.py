import logging

import click

from config import Config
from reporting.table_writer import table_writer


def create_app(config_class=Config):
    """
    Creates and configures the mopnl command-line application.

    The returned click group carries the active configuration in `config`
    and its extensions in `extensions`, and has every subcommand of the
    api group registered.

    Args:
        config_class: The configuration class to use for the app.

    Returns:
        The configured click group.
    """
    app = click.Group('mopnl', help='Matrix orthogonal polynomials from non-symmetric recurrences.')
    app.config = {key: getattr(config_class, key) for key in dir(config_class) if key.isupper()}
    app.extensions = {}

    logging.basicConfig(level=app.config['LOG_LEVEL'],
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logger = logging.getLogger('mopnl')

    try:
        table_writer.init_app(app)
    except Exception as e:
        logger.error(f"Failed to initialize extensions: {e}")

    from api.routes import api
    for command in api.commands.values():
        app.add_command(command)

    return app


def main():
    create_app()()


if __name__ == '__main__':
    main()
