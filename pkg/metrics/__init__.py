from metrics.diagnostics import (
    MonitorReading,
    TargetMonitor,
    calibrated_incorrect_rate,
    forgetting_rate,
    incorrect_supervision_rate,
    partial_incorrect_rate,
)
from metrics.evaluation import EvaluationReport, evaluate, predict, report_from_predictions
