use find_client::ClientError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: flags, files, ids or request contents. Exit code 2.
    #[error("{0}")]
    Validation(String),

    /// Everything else. Exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e.code() {
            Some("validation" | "not_found" | "conflict") => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<find_service::ServiceError> for CliError {
    fn from(e: find_service::ServiceError) -> Self {
        match e {
            find_service::ServiceError::Validation(_) | find_service::ServiceError::NotFound(_) => {
                CliError::Validation(e.to_string())
            }
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<find_core::Error> for CliError {
    fn from(e: find_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}
