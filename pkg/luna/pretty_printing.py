from colorama import Fore

_FORES = {
    'red': Fore.RED,
    'green': Fore.GREEN,
    'yellow': Fore.YELLOW,
    'cyan': Fore.CYAN,
}


def paint(s, color):
    if color not in _FORES:
        raise ValueError(f'Unknown color {color}')
    return _FORES[color] + str(s) + Fore.RESET


class Color(object):
    @staticmethod
    def red(s):
        return paint(s, 'red')

    @staticmethod
    def green(s):
        return paint(s, 'green')

    @staticmethod
    def yellow(s):
        return paint(s, 'yellow')

    @staticmethod
    def cyan(s):
        return paint(s, 'cyan')
