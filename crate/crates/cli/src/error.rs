use fairssl::ErrorKind;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fairssl::Error),

    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Data(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::UnknownKey { .. } | CliError::Config(_) => ErrorKind::Config,
            CliError::Data(_) => ErrorKind::Data,
        }
    }

    /// 2 configuration, 3 data, 4 diverged training, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Diverged => 4,
            ErrorKind::Internal => 1,
        }
    }

    /// The JSON object printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.kind() {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Diverged => "diverged",
            ErrorKind::Internal => "internal",
        };
        let mut v = json!({
            "error": kind,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::UnknownKey { key } => v["key"] = json!(key),
            CliError::Core(fairssl::Error::Diverged { epoch, .. }) => v["epoch"] = json!(epoch),
            CliError::Core(fairssl::Error::InsufficientSample { segment, count, required }) => {
                v["segment"] = json!(segment);
                v["count"] = json!(count);
                v["required"] = json!(required);
            }
            _ => {}
        }
        v
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_kind() {
        assert_eq!(CliError::UnknownKey { key: "a.b".into() }.exit_code(), 2);
        assert_eq!(CliError::Core(fairssl::Error::Data("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(fairssl::Error::Diverged { epoch: 3, loss: f64::NAN }).exit_code(), 4);
    }

    #[test]
    fn unknown_key_json_names_the_key() {
        let v = CliError::UnknownKey { key: "pretrain.epoch".into() }.to_json();
        assert_eq!(v["key"], "pretrain.epoch");
        assert_eq!(v["error"], "config");
    }
}
