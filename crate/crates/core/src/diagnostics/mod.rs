//! Inequality quantities measured on discrete trajectories, and empirical
//! fits of the constants that appear in them.

pub mod fit;
pub mod frequency;
pub mod ledger;
pub mod reports;

pub use fit::{fit_interpolation, fit_two_ball, InterpolationFit, TwoBallFit};
pub use frequency::{frequency_identity_residual, frequency_trace, gaussian_weight, FrequencySample, FrequencyTrace};
pub use ledger::{ConstantsLedger, FitRecord, LedgerMode};
pub use reports::{
    caccioppoli_report, gradient_bound_report, h0_compute, h0_recovery_check, interpolation_data, interpolation_report,
    observability_quotient, observability_report, sweep_regression, two_ball_data, two_ball_report, H0Geometry,
    InequalityReport, InterpolationData, ReportKind, SweepPoint, SweepRegression, TwoBallData, REPORT_CSV_HEADER,
};
