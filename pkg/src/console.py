"""
Console helpers for the command line: colored headers, steps and status lines.
"""
import sys


# ---------------------------
# ANSI Colors
# ---------------------------
class Colors:
    HEADER = '\033[95m'
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'


def _paint(text, *codes):
    if not sys.stdout.isatty():
        return text
    return "".join(codes) + text + Colors.END


def print_header(text):
    """Print a formatted header."""
    line = "=" * 70
    print(_paint(line, Colors.BOLD, Colors.HEADER))
    print(_paint(text.center(70), Colors.BOLD, Colors.HEADER))
    print(_paint(line, Colors.BOLD, Colors.HEADER))


def print_section(text):
    print()
    print(_paint(f" {text}", Colors.BOLD, Colors.CYAN))
    print(_paint("-" * 70, Colors.CYAN))


def print_step(step_num, text):
    print()
    print(_paint(f"[STEP {step_num}] {text}", Colors.BOLD, Colors.BLUE))


def print_success(text):
    print(_paint(f" {text}", Colors.GREEN))


def print_info(text):
    print(_paint(f" {text}", Colors.CYAN))


def print_warning(text):
    print(_paint(f" {text}", Colors.YELLOW))


def print_error(text):
    print(_paint(f" {text}", Colors.RED), file=sys.stderr)


def print_table(rows, columns):
    """Print a list of dicts as an aligned table."""
    if not rows:
        print("  (no rows)")
        return
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in columns}
    print("  " + " | ".join(c.ljust(widths[c]) for c in columns))
    print("  " + "-+-".join("-" * widths[c] for c in columns))
    for row in rows:
        print("  " + " | ".join(_fmt(row.get(c)).ljust(widths[c]) for c in columns))


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.4f}"
    return "" if value is None else str(value)
