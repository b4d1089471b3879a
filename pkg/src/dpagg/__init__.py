"""User-level differentially private keyed aggregation.

Three pipelines share one map/shuffle/reduce engine:

* ``run_naive`` uses five shuffles and bounds contributions twice,
* ``run_fast`` (RuntimeOptimized) uses two shuffles and bounds once, and
* ``run_plume`` uses three shuffles. It reuses the user-grouped input for
  the second bounding pass through a map-side join.
"""

from dpagg.bounding import BoundedKeyHeap, bound_contributions, heap_insert, heap_merge
from dpagg.datagen import ZipfMandelbrot, gen_landmark, gen_synth, ingest_corpus, zm_sample
from dpagg.errors import ContractViolation, DataIOError, DPAggError, InvalidParameterError
from dpagg.evaluate import ErrorReport, absolute_error, error_report, relative_error, sweep_l
from dpagg.mechanisms import CountMechanism, Mechanism, SumMechanism, make_mechanism
from dpagg.model import (Dataset, PrivacyBudget, Provenance, Record, read_tsv, split_budget,
                         write_result_csv)
from dpagg.noise import key_rank, laplace, noise_for_key
from dpagg.pipelines import (PipelineReport, RunOptions, exact_report, run_exact, run_fast,
                             run_naive, run_pipeline, run_plume)
from dpagg.selection import build_lookup, dp_retain_key, selection_threshold, unique_user_counts

__version__ = "0.1.0"
