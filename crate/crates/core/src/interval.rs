use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl std::str::FromStr for Interval {
    type Err = String;

    /// Parses `lo,hi` or a single value.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("invalid number {t:?}: {e}"))
        };
        let iv = match s.split_once(',') {
            Some((a, b)) => Interval::new(parse(a)?, parse(b)?),
            None => Interval::point(parse(s)?),
        };
        if !iv.is_valid() {
            return Err(format!("interval {iv} is empty or not finite"));
        }
        Ok(iv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_points() {
        assert_eq!("0.9,1.1".parse::<Interval>().unwrap(), Interval::new(0.9, 1.1));
        assert_eq!("-0.05, 0.05".parse::<Interval>().unwrap(), Interval::new(-0.05, 0.05));
        assert_eq!("2".parse::<Interval>().unwrap(), Interval::point(2.0));
        assert!("1,0".parse::<Interval>().is_err());
        assert!("a,b".parse::<Interval>().is_err());
    }

    #[test]
    fn closed_bounds() {
        let iv = Interval::new(220.0, 255.0);
        assert!(iv.contains(220.0));
        assert!(iv.contains(255.0));
        assert!(!iv.contains(219.999));
    }
}
