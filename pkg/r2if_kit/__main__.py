import sys

from . import main
from .color_util import printc

if __name__ == '__main__':
    try:
        sys.exit(main.run())
    except KeyboardInterrupt:
        printc('&cThe program is interrupted by ^C, exiting...')
        sys.exit(0)
