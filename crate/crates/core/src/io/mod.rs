//! Dataset ingestion and metrics persistence.

mod dense;
mod metrics;
mod ratings;

pub use dense::{load_dense_matrix, parse_dense_csv, parse_matrix_market_dense};
pub use metrics::{
    format_g17, metrics_rows, parse_metrics, read_metrics, render_metrics, write_metrics, MetricsRow, METRICS_HEADER,
};
pub use ratings::{load_ratings, parse_ratings, split_train_test, train_count, IdMap, Ratings, RatingsFormat};
