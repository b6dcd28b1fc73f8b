//! Error metrics and report rendering.

pub mod metrics;
pub mod render;

pub use metrics::{
    errors, euclid, euclid_error, read_errors_csv, summarize, write_errors_csv, ErrorReport, Histogram,
    HISTOGRAM_BINS,
};
pub use render::{comparison_csv, heat_color, rssi_heatmap_svg, trajectory_svg};
