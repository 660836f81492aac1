"""Figure rendering for simcf experiment CSVs.

Consumes only the CSV schemas written by the ``simcf`` CLI; the package has
no dependency on simcf itself.
"""

from .charts import (
    ChartError,
    QUALITY_METRIC_PATTERN,
    quality_figure,
    read_rows,
    synth_figure,
)

__version__ = "0.1.0"
