import argparse
import sys


class ProgramArgs:
    # Never use True/False !
    # Attributes declared in __init__ become `--key value` flags, an
    # attribute beginning with '_' is kept out of the command line.
    # Subclasses may set `_modes` to accept a leading positional mode.
    _modes = ()
    _help = {}

    def __init__(self):
        self.mode = ''

    def _check_args(self):
        assert True

    def __repr__(self):
        basic_ret = ""
        for key, value in self.__dict__.items():
            if key[0] == '_':
                continue
            basic_ret += "\t--{}={}\n".format(key, value)

        deduced_ret = ""
        deduced_args = [ele for ele in dir(self)
                        if ele[0] != '_' and ele not in self.__dict__
                        and not callable(getattr(self, ele))]
        for key in deduced_args:
            deduced_ret += "\t--{}={}\n".format(key, getattr(self, key))

        ret = "Basic Args:\n" + basic_ret
        if deduced_ret != "":
            ret += "Deduced Args:\n" + deduced_ret
        return ret

    def _build_parser(self, prog=None):
        parser = argparse.ArgumentParser(prog=prog, allow_abbrev=False)
        if self._modes:
            parser.add_argument('mode', choices=list(self._modes),
                                help='subcommand to run')
        for key, value in self.__dict__.items():
            if key[0] == '_' or key == 'mode':
                continue
            flag = '--{}'.format(key.replace('_', '-'))
            help_text = self._help.get(key, '')
            # Hack support for true/false
            if isinstance(value, bool):
                parser.add_argument(flag, action='store', default=str(value),
                                    type=str, dest=str(key),
                                    help=f'{help_text} (true/false, default {value})')
            else:
                parser.add_argument(flag, action='store', default=value,
                                    type=type(value), dest=str(key),
                                    help=f'{help_text} (default {value!r})')
        return parser

    def _parse_args(self, argv=None, prog=None):
        if argv is None:
            argv = sys.argv[1:]
        bool_keys = [k for k, v in self.__dict__.items() if isinstance(v, bool)]
        parser = self._build_parser(prog)
        parsed_args = parser.parse_args(argv).__dict__
        for ele in bool_keys:
            if parsed_args[ele] in ['True', 'true', 'on', '1', 'yes']:
                parsed_args[ele] = True
            elif parsed_args[ele] in ['False', 'false', 'off', '0', 'no']:
                parsed_args[ele] = False
            else:
                raise ValueError('You must pass a boolean value for arg {}'.format(ele))
        self.__dict__.update(parsed_args)
        self._explicit = {k for k in parsed_args
                          if _flag_given(argv, k)}
        self._check_args()
        return self

    def _format_help(self, prog=None):
        return self._build_parser(prog).format_help()


def _flag_given(argv, key):
    flag = '--{}'.format(key.replace('_', '-'))
    return any(a == flag or a.startswith(flag + '=') for a in argv)
