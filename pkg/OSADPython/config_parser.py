# -*- coding: utf-8 -*-
"""
Parser for the training configuration text format:

    # comment
    learning_rate = 1e-3
    encoder_channels = {8, 16, 32, 64, 64}
    crop = true
    name = "toy"

One `key = value` entry per line; values are integers, reals, true / false, double quoted strings and brace arrays.
"""

import logging
from typing import Any

from pyparsing import (
    alphanums,
    alphas,
    Combine,
    DelimitedList,
    Forward,
    Group,
    Keyword,
    nums,
    Optional,
    ParseBaseException,
    python_style_comment,
    QuotedString,
    replace_with,
    StringEnd,
    Suppress,
    Word,
    ZeroOrMore,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)


class ConfigSyntaxError(Exception):
    """
    Malformed configuration text; carries the line number.
    """

    def __init__(self, message: str, lineno: int = 0) -> None:
        self.lineno = lineno
        super().__init__(message)


def convert_numbers(s, loc, toks):
    n = toks[0]
    try:
        return int(n)
    except ValueError:
        return float(n)


def convert_tuple(t):
    return tuple(t[0])


cfgValue = Forward()

# pyparsing's replace_with has an incorrect type annotation: https://github.com/pyparsing/pyparsing/issues/602
TRUE = Keyword("true").set_parse_action(replace_with(True))  # type: ignore
FALSE = Keyword("false").set_parse_action(replace_with(False))  # type: ignore

cfgString = QuotedString(quote_char='"', esc_char='\\')
cfgNumber = Combine(Optional('-') + ('0' | Word('123456789', nums)) +
                    Optional('.' + Word(nums)) +
                    Optional(Word('eE', exact=1) + Word(nums + '+-', nums)))
cfgNumber.set_parse_action(convert_numbers)
cfgArray = Group(Suppress('{') + Optional(DelimitedList(cfgValue)) + Suppress('}')).set_parse_action(convert_tuple)

cfgValue << (cfgString
             | cfgNumber
             | cfgArray
             | TRUE
             | FALSE)

cfgKey = Word(alphas + "_", alphanums + "_")
cfgEntry = Group(cfgKey + Suppress('=') + cfgValue)
cfgGrammar = ZeroOrMore(cfgEntry) + StringEnd()
cfgGrammar.ignore(python_style_comment)


def parse_config_text(text: str) -> dict[str, Any]:
    """
    Parse configuration text into an ordered {key: value} mapping. Duplicate keys are errors.
    """
    try:
        entries = cfgGrammar.parse_string(text, parse_all=True)
    except ParseBaseException as ex:
        raise ConfigSyntaxError(f"Syntax error in line {ex.lineno}: {ex.line.strip()!r} ({ex.msg})",
                                lineno=ex.lineno) from ex

    values: dict[str, Any] = {}
    for key, value in entries:
        if key in values:
            raise ConfigSyntaxError(f"Duplicate key {repr(key)}")
        values[key] = value

    logger.debug("Parsed %d configuration entries", len(values))
    return values


def format_config_value(value: Any) -> str:
    """
    Inverse of the value grammar.
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace('\\', '\\\\').replace('"', '\\"') + '"'
    if isinstance(value, (tuple, list)):
        return "{" + ", ".join(format_config_value(item) for item in value) + "}"
    raise ConfigSyntaxError(f"Cannot format configuration value {repr(value)} of type {type(value).__name__}")
