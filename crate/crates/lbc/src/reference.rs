//! Published simulation results of the reference controller, kept for report
//! rendering. Nothing here is computed.

/// `(metric, mean, std)` tracking errors.
pub const TRACKING_ERRORS: [(&str, f64, f64); 6] = [
    ("e_v", 0.1420, 0.0568),
    ("e_w", 0.1806, 0.0534),
    ("e_h", 0.0280, 0.0438),
    ("e_y", 0.0126, 0.0051),
    ("e_p", 0.0487, 0.1796),
    ("e_r", 0.0157, 0.0065),
];

/// `(command, lo, hi)` largest stable command intervals.
pub const STABLE_RANGES: [(&str, f64, f64); 4] =
    [("height", 0.33, 0.80), ("roll", -0.38, 0.35), ("pitch", -0.92, 1.41), ("yaw", -1.50, 1.34)];
