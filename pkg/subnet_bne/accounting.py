"""
accounting.py - Communication data-size accounting

Data size = 12 x d x messages, with within-side and cross messages of each side
counted with that side's d.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

from subnet_bne.compression import BYTES_PER_ENTRY
from subnet_bne.engine import RunResult
from subnet_bne.errors import AccountingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccountingReport:
    messages: Tuple[int, int]
    bytes_total: int
    ticks: int
    bytes_per_message: Tuple[int, int]

    @property
    def messages_total(self) -> int:
        return sum(self.messages)

    @property
    def avg_bytes_per_iteration(self) -> float:
        return self.bytes_total / self.ticks if self.ticks else 0.0

    @property
    def avg_kb_per_iteration(self) -> float:
        return self.avg_bytes_per_iteration / 1024.0

    def to_dict(self) -> Dict:
        return {
            "messages": list(self.messages),
            "messages_total": self.messages_total,
            "bytes_total": self.bytes_total,
            "bytes_per_message": list(self.bytes_per_message),
            "avg_bytes_per_iteration": self.avg_bytes_per_iteration,
            "avg_kb_per_iteration": self.avg_kb_per_iteration,
        }


def account_bytes(result: RunResult, d: Optional[Union[int, Tuple[int, int]]] = None) -> AccountingReport:
    """Check bytes == 12 d messages for the run and report the per-iteration average"""
    if d is None:
        d = result.d
    elif isinstance(d, int):
        d = (d, d)
    expected = sum(BYTES_PER_ENTRY * d[s] * result.messages[s] for s in range(2))
    if expected != result.bytes_total:
        raise AccountingError(expected, result.bytes_total)
    report = AccountingReport(
        tuple(result.messages), result.bytes_total, result.ticks, tuple(BYTES_PER_ENTRY * v for v in d)
    )
    log.debug("accounted %d messages, %d bytes over %d ticks", report.messages_total, report.bytes_total, report.ticks)
    return report
