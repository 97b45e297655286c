from theory.fixed_point import (
    ExternalSignal,
    FixedPoint,
    build_external_signal,
    fixed_point,
    run_fixed_point_trials,
    soft_gradient,
    stationarity_residual,
    update_map,
)
