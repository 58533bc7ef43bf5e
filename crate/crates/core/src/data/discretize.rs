use serde::{Deserialize, Serialize};

/// Base of the logarithm in the `floor(log(x)^2)` bucketing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogBase(pub f64);

impl LogBase {
    pub const NATURAL: LogBase = LogBase(std::f64::consts::E);

    pub fn log(self, x: f64) -> f64 {
        if self.0 == std::f64::consts::E {
            x.ln()
        } else {
            x.ln() / self.0.ln()
        }
    }
}

impl Default for LogBase {
    fn default() -> Self {
        Self::NATURAL
    }
}

/// Buckets a numeric value: `floor(log(x)^2)` for `x > 2`, otherwise 1.
/// `None` marks a missing value.
pub fn discretize_numeric(x: Option<f64>, base: LogBase) -> Option<i64> {
    let x = x?;
    if x > 2.0 {
        let l = base.log(x);
        Some((l * l).floor() as i64)
    } else {
        Some(1)
    }
}
