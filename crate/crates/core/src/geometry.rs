//! Finite unions of disjoint open intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded one-dimensional C^{1,1} set: finitely many disjoint open
/// intervals, none touching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C11Set {
    intervals: Vec<(f64, f64)>,
}

impl C11Set {
    /// Builds the set from endpoint pairs in any order. Closed or half-open
    /// input is read as the open interval with the same endpoints.
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Geometry("empty interval list".into()));
        }
        let mut iv = intervals.to_vec();
        for &(a, b) in &iv {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Geometry(format!("non-finite endpoint in ({a}, {b})")));
            }
            if b <= a {
                return Err(Error::Geometry(format!("interval ({a}, {b}) has no interior")));
            }
        }
        iv.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in iv.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::Geometry(format!(
                    "intervals ({}, {}) and ({}, {}) overlap or touch",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { intervals: iv })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(&[(a, b)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Index of the component containing `x`.
    pub fn component(&self, x: f64) -> Option<usize> {
        self.intervals.iter().position(|&(a, b)| a < x && x < b)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.component(x).is_some()
    }

    /// `δ_x = dist(x, Dᶜ)`.
    pub fn delta(&self, x: f64) -> f64 {
        match self.component(x) {
            Some(i) => {
                let (a, b) = self.intervals[i];
                (x - a).min(b - x)
            }
            None => 0.0,
        }
    }

    /// `r₀`: the smallest interval length or gap.
    pub fn localization_radius(&self) -> f64 {
        let lengths = self.intervals.iter().map(|(a, b)| b - a);
        let gaps = self.intervals.windows(2).map(|w| w[1].0 - w[0].1);
        lengths.chain(gaps).fold(f64::INFINITY, f64::min)
    }

    pub fn diam(&self) -> f64 {
        self.intervals.last().unwrap().1 - self.intervals[0].0
    }

    pub fn distortion(&self) -> f64 {
        self.diam() / self.localization_radius()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Image under `x ↦ center + s (x − center)`, with `center` the midpoint
    /// of the hull.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let c = 0.5 * (self.intervals[0].0 + self.intervals.last().unwrap().1);
        let iv: Vec<(f64, f64)> = self
            .intervals
            .iter()
            .map(|&(a, b)| (c + s * (a - c), c + s * (b - c)))
            .collect();
        Self::new(&iv)
    }

    /// Whether the set is symmetric about the origin.
    pub fn is_symmetric(&self) -> bool {
        let n = self.intervals.len();
        (0..n).all(|i| {
            let (a, b) = self.intervals[i];
            let (c, d) = self.intervals[n - 1 - i];
            ((a + d).abs() <= 1e-14 * d.abs().max(1.0)) && ((b + c).abs() <= 1e-14 * c.abs().max(1.0))
        })
    }
}

/// Whether the endpoint pairs form a valid set.
pub fn validate(intervals: &[(f64, f64)]) -> bool {
    C11Set::new(intervals).is_ok()
}

pub fn localization_radius(d: &C11Set) -> f64 {
    d.localization_radius()
}

pub fn delta(d: &C11Set, x: f64) -> f64 {
    d.delta(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distances() {
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        assert_eq!(d.delta(0.0), 1.0);
        assert_eq!(d.delta(1.5), 0.0);
        assert_eq!(d.localization_radius(), 2.0);
        let two = C11Set::new(&[(0.2, 1.0), (-1.0, -0.2)]).unwrap();
        assert!((two.delta(0.5) - 0.3).abs() < 1e-15);
        assert!((two.localization_radius() - 0.4).abs() < 1e-15);
        assert!(two.is_symmetric());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(C11Set::new(&[]).is_err());
        assert!(!validate(&[(0.0, 1.0), (0.5, 2.0)]));
        assert!(!validate(&[(0.0, 1.0), (1.0, 2.0)]));
        assert!(!validate(&[(1.0, 1.0)]));
    }

    fn set_strategy() -> impl Strategy<Value = C11Set> {
        prop::collection::vec((0.05f64..1.0, 0.05f64..1.0), 1..5).prop_map(|parts| {
            let mut x = -1.0;
            let mut iv = Vec::new();
            for (len, gap) in parts {
                iv.push((x, x + len));
                x += len + gap;
            }
            C11Set::new(&iv).unwrap()
        })
    }

    proptest! {
        #[test]
        fn delta_is_one_lipschitz(d in set_strategy(), x in -2.0f64..4.0, y in -2.0f64..4.0) {
            prop_assert!((d.delta(x) - d.delta(y)).abs() <= (x - y).abs() + 1e-15);
        }

        #[test]
        fn distortion_at_least_one(d in set_strategy()) {
            prop_assert!(d.distortion() >= 1.0);
        }
    }
}
