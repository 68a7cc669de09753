use viewuq_core::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::Unknown { .. }
                | Error::ViewDomain(_)
                | Error::Sweep(_)
                | Error::IncompleteSweep(_)
                | Error::ZeroDropout
                | Error::TooFewSamples { .. }
                | Error::EmptyEnsemble
                | Error::EmptyDataset
                | Error::RawSize { .. } => EXIT_USAGE,
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
                _ => EXIT_INTERNAL,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
