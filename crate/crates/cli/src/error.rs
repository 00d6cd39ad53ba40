/// Failures raised by the CLI itself. Library errors pass through as
/// [`mmgcn::Error`] and are classified by [`exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config {origin}: {msg}")]
    Schema { origin: String, msg: String },

    #[error("data validation failed: {0}")]
    Data(String),
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

fn core_code(e: &mmgcn::Error) -> u8 {
    use mmgcn::Error::*;
    match e {
        Io { .. } => EXIT_IO,
        Validation { .. } | Json { .. } | Shape(_) => EXIT_DATA,
        NonFinite(_) | Numerical(_) => EXIT_NUMERICAL,
        InvalidArgument(_) | Config(_) => EXIT_USAGE,
    }
}

/// Exit status for an error chain: the first classifiable cause wins.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) | CliError::Schema { .. } => EXIT_USAGE,
                CliError::Data(_) => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<mmgcn::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}
