from output.csv_report import (CsvReport, DECAY_HEADER, LEDGER_HEADER, RUN_HEADER,
                               format_value, read_report)
from output.plots import ConvergencePlot, DecayPlot

__all__ = [
    "CsvReport",
    "ConvergencePlot",
    "DecayPlot",
    "DECAY_HEADER",
    "LEDGER_HEADER",
    "RUN_HEADER",
    "format_value",
    "read_report",
]
