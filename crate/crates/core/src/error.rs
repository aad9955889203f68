use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("tensor `{0}` has no quantization parameters")]
    Uncalibrated(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("layer `{layer}` fan-in {taps} exceeds the int32 accumulator limit of {limit} taps")]
    FanIn {
        layer: String,
        taps: usize,
        limit: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("disc mask is empty")]
    EmptyDisc,
    #[error("dataset is empty")]
    EmptyDataset,
}

impl Error {
    /// True for errors caused by numeric conditions (non-finite values,
    /// degenerate statistics) rather than malformed inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Calibration(_) | Error::FanIn { .. }
        )
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
