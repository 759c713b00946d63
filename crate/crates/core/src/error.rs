use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid projection set: {0}")]
    InvalidProjectionSet(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unknown test-time transform index {index} (model has {available})")]
    UnknownTransform { index: usize, available: usize },
    #[error("covariance factorization failed for transform {transform} with epsilon {epsilon:e}")]
    SingularCovariance { transform: usize, epsilon: f64 },
    #[error(
        "non-finite loss at step {step}: total {total}, context {context}, content {content}, alpha {alpha}"
    )]
    NonFiniteLoss { step: usize, total: f64, context: f64, content: f64, alpha: f64 },
    #[error("step {step} out of range for {total} total steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("AUROC needs both classes, got {positives} anomalies and {negatives} normals")]
    SingleClass { positives: usize, negatives: usize },
    #[error("cluster {label} has a single member")]
    SingletonCluster { label: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}
