from .config import (
    GP_MUTATION_PROB,
    OUTPUT_ENV,
    ConfigError,
    ExperimentSpec,
    emit_config,
    load_config,
    parse_config,
)
from .outputs import (
    ReportTable,
    emit_outputs,
    read_csv_dicts,
    read_run_csv,
    report_from_dir,
    report_table,
)
from .runner import (
    ExperimentResult,
    PreflightError,
    RunRecord,
    TimingSummary,
    TransferReport,
    cutoff_snapshots,
    preflight,
    pretrain_and_transfer,
    run_all,
    run_experiment,
)

__all__ = [
    "ConfigError", "ExperimentResult", "ExperimentSpec", "GP_MUTATION_PROB", "OUTPUT_ENV",
    "PreflightError", "ReportTable", "RunRecord", "TimingSummary", "TransferReport",
    "cutoff_snapshots", "emit_config", "emit_outputs", "load_config", "parse_config",
    "preflight", "pretrain_and_transfer", "read_csv_dicts", "read_run_csv", "report_from_dir",
    "report_table", "run_all", "run_experiment",
]
