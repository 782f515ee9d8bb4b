use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nvspec::Error),

    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Io(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 input, 3 infeasible parameters, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use nvspec::Error as E;
        match self {
            CliError::Input(_) | CliError::Io(_) | CliError::Json(_) => 2,
            CliError::Core(e) => match e {
                E::Infeasible(_) | E::Capacity(_) | E::Range(_) | E::EmptyEnsemble(_) => 3,
                E::Numerical(_) | E::Accuracy { .. } | E::Singularity(_) | E::DegenerateProfile => 4,
                _ => 2,
            },
        }
    }
}
