"""Figure generation over stratsample's CSV/JSON output files."""

from .figures import (
    BUILDERS,
    STRUCTURE,
    FigureInputError,
    FigureSpec,
    build_figure,
    check_structure,
    make_figure,
)

__version__ = "0.1.0"
