use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// One rejected entry of a point list.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct PointIssue {
    /// Position in the submitted list, if the problem is tied to one entry.
    pub index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for PointIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "entry {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("cannot read image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid points{}: {}", .path.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default(), join_issues(.issues))]
    Points {
        path: Option<PathBuf>,
        issues: Vec<PointIssue>,
    },

    #[error("readout head {path}: {message}")]
    Head { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("engine: {0}")]
    Engine(#[from] dragkit_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_issues(issues: &[PointIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Image { .. } => 2,
            AppError::Points { .. } => 3,
            AppError::Engine(_) | AppError::Head { .. } => 4,
            AppError::Config { .. } | AppError::Format { .. } | AppError::Io { .. } => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let image = AppError::Image {
            path: "a.png".into(),
            message: "missing".into(),
        };
        assert_eq!(image.exit_code(), 2);
        let points = AppError::Points {
            path: None,
            issues: vec![],
        };
        assert_eq!(points.exit_code(), 3);
        let engine = AppError::from(dragkit_core::Error::DegenerateMask);
        assert_eq!(engine.exit_code(), 4);
    }

    #[test]
    fn points_message_lists_entries() {
        let err = AppError::Points {
            path: Some("p.json".into()),
            issues: vec![
                PointIssue {
                    index: Some(0),
                    message: "handle (99, 1) outside 64x64 image".into(),
                },
                PointIssue {
                    index: Some(2),
                    message: "target missing".into(),
                },
            ],
        };
        let msg = err.to_string();
        assert!(msg.contains("in p.json"));
        assert!(msg.contains("entry 0: handle (99, 1)"));
        assert!(msg.contains("entry 2: target missing"));
        assert!(!msg.contains('\n'));
    }
}
