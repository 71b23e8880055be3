# output/csv_report.py
import csv
import os
from typing import Iterable, Mapping, Sequence

from src.logger import log_debug, log_success

RUN_HEADER = ("case", "method", "p", "q", "elements", "dofs", "h_max", "k",
              "err_st", "err_A_final", "eoc_st", "wall_s", "iters")

DECAY_HEADER = ("case", "method", "p", "q", "elements", "n", "t", "norm_A",
                "envelope", "envelope_sharp", "semi_discrete")

LEDGER_HEADER = ("p", "elements", "element", "h", "C_INV", "C_inv", "tau",
                 "C_delta", "delta", "alpha", "beta", "gamma", "C_PF", "C_PF_source")


def format_value(value) -> str:
    """Fixed text form so identical runs produce identical files."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.10e}"
    return str(value)


class CsvReport:
    """
    Row-by-row CSV writer. The header is written on creation and every row
    is flushed immediately, so a failing run still leaves the rows it
    finished.
    """

    def __init__(self, path: str, header: Sequence[str] = RUN_HEADER):
        self.path = path
        self.header = tuple(header)
        self.rows = 0
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(self.header)

    def send(self, row: Mapping) -> bool:
        unknown = set(row) - set(self.header)
        if unknown:
            raise ValueError(f"columns not in header: {sorted(unknown)}")
        with open(self.path, "a", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(
                [format_value(row.get(name)) for name in self.header])
            f.flush()
        self.rows += 1
        log_debug(f"{os.path.basename(self.path)}: row {self.rows} written")
        return True

    def send_many(self, rows: Iterable[Mapping]) -> int:
        count = 0
        for row in rows:
            self.send(row)
            count += 1
        return count

    def close(self):
        log_success(f"CSV written to {self.path} ({self.rows} rows)")


def read_report(path: str):
    """Rows of a report as dictionaries of strings."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
