use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("method `{method}` is not registered for scenario `{scenario}`")]
    Unsupported { scenario: String, method: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] hessfit_core::Error),
    #[error("not enough points for a slope fit: {0}")]
    TooFewPoints(usize),
    #[error("nonpositive metric {metric} at iteration {iter}")]
    NonPositiveMetric { iter: usize, metric: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;
