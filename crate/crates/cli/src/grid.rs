//! Sweep grids: `a:b` (inclusive integer range) and `logspace(lo,hi,count)`.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    Range { start: i64, end: i64 },
    Logspace { lo: f64, hi: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridParseError(pub String);

impl fmt::Display for GridParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid grid: {}", self.0)
    }
}

impl std::error::Error for GridParseError {}

impl FromStr for Grid {
    type Err = GridParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("logspace(").and_then(|r| r.strip_suffix(')')) {
            let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(GridParseError(format!("{s:?} needs three arguments")));
            }
            let num = |p: &str| p.parse::<f64>().map_err(|_| GridParseError(format!("{p:?} is not a number")));
            let (lo, hi) = (num(parts[0])?, num(parts[1])?);
            let count: usize = parts[2]
                .parse()
                .map_err(|_| GridParseError(format!("{:?} is not a count", parts[2])))?;
            if count == 0 || !lo.is_finite() || !hi.is_finite() {
                return Err(GridParseError(format!("{s:?} is empty or not finite")));
            }
            return Ok(Grid::Logspace { lo, hi, count });
        }
        if let Some((a, b)) = s.split_once(':') {
            let int = |p: &str| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|_| GridParseError(format!("{p:?} is not an integer")))
            };
            let (start, end) = (int(a)?, int(b)?);
            if end < start {
                return Err(GridParseError(format!("{s:?} is empty")));
            }
            return Ok(Grid::Range { start, end });
        }
        Err(GridParseError(format!("{s:?} is neither a:b nor logspace(lo,hi,count)")))
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::Range { start, end } => (start..=end).map(|v| v as f64).collect(),
            Grid::Logspace { lo, hi, count } => {
                if count == 1 {
                    return vec![10f64.powf(lo)];
                }
                (0..count)
                    .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
                    .collect()
            }
        }
    }
}
