# standard
import json
import os
import random
import re
# local
import logstring

SETTING_LINE = re.compile(r"^\s*(?P<name>[A-Za-z_][\w.]*)\s*=\s*(?P<value>.*?)\s*$")


def parse_setting_value(text: str) -> (dict | list | float | int | str):
    """JSON where possible (numbers, lists, dicts), otherwise comma separated strings. One item stays a string."""
    try:
        return json.loads(text)
    except json.decoder.JSONDecodeError:
        items = [item.strip() for item in text.split(",")]
        return items if len(items) > 1 else items[0]


def parse_input_file_line(line: str, parse_value: bool = True) -> (tuple | None):
    """
    Parse a NAME = value line of an .ini or .env file, or a name=value command line assignment.
    :param line: One line, e.g. "SWEEP_TOLERANCES = [1e-4, 1e-8]"
    :param parse_value: Convert the value with parse_setting_value. False keeps the raw string (for .env files).
    :return: (name, value), or None for comments, blank lines and lines without an assignment.
    """
    match = SETTING_LINE.match(line)
    if match is None:
        return
    value = match["value"]
    return match["name"], parse_setting_value(value) if parse_value else value


def parse_input_file(path: str, parse_values: bool = True,
                     set_environmental_variables: bool = False) -> dict:
    """
    Settings from an .ini or .env file. Later lines win over earlier ones with the same name.
    :param path: Path to the file
    :param parse_values: Convert values to numbers / lists where possible
    :param set_environmental_variables: Also export every setting to os.environ (as strings)
    :return: Settings by name
    """
    with open(path) as input_file:
        parsed_lines = [parse_input_file_line(line, parse_values) for line in input_file]
    settings = dict(parsed_line for parsed_line in parsed_lines if parsed_line is not None)
    if set_environmental_variables:
        os.environ.update({name: str(value) for name, value in settings.items()})
    return settings


def load_settings(path: str, defaults: dict) -> dict:
    """
    Config values from an .ini file on top of defaults. A missing file leaves the defaults in place.
    :param path: Path to the .ini file
    :param defaults: Value for every known setting
    :return: Merged settings. Keys that are not in defaults are kept as well.
    """
    settings = dict(defaults)
    try:
        settings.update(parse_input_file(path))
    except FileNotFoundError:
        logstring.ConfigMissing(path).record("WARNING")
    return settings


def parse_param_assignments(assignments: list[str]) -> dict[str, float]:
    """
    Parse name=value strings from the command line, e.g. ["k=40", "m=1.5"].
    :param assignments: Strings in the same name=value form as config file lines
    :return: Parameter values by name
    """
    params = dict()
    for assignment in assignments or list():
        parsed_line = parse_input_file_line(assignment)
        if parsed_line is None:
            raise ValueError(f"Parameter assignment '{assignment}' is not of the form name=value.")
        name, value = parsed_line
        try:
            params[name] = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"Parameter '{name}' needs a numeric value, got '{value}'.") from None
    return params


def as_float_list(value: (list | str | float)) -> list[float]:
    """Config value (JSON list, comma separated strings or a single value) as a list of floats."""
    if isinstance(value, (list, tuple)):
        return [float(item) for item in value]
    return [float(value)]


def generate_random_hex(length: int) -> str:
    """Random lowercase hex string, used as the run id in log lines."""
    return "".join(random.choices("0123456789abcdef", k=length))
