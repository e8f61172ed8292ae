//! Personality traits, their asset priors and the aggregation of per-trait
//! policies into one personal policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{Allocation, ASSET_COUNT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TRAIT_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trait {
    #[serde(rename = "O")]
    Openness,
    #[serde(rename = "C")]
    Conscientiousness,
    #[serde(rename = "E")]
    Extraversion,
    #[serde(rename = "A")]
    Agreeableness,
    #[serde(rename = "N")]
    Neuroticism,
}

impl Trait {
    pub const ALL: [Trait; TRAIT_COUNT] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Trait::Openness => 'O',
            Trait::Conscientiousness => 'C',
            Trait::Extraversion => 'E',
            Trait::Agreeableness => 'A',
            Trait::Neuroticism => 'N',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Trait::ALL
            .into_iter()
            .find(|t| s.eq_ignore_ascii_case(t.name()) || s.eq_ignore_ascii_case(&t.letter().to_string()))
            .ok_or_else(|| Error::Config(format!("unknown trait `{s}`; expected one of O, C, E, A, N")))
    }
}

/// Asset-by-trait affinity coefficients. Rows follow [`crate::env::Asset`]
/// order, columns [`Trait`] order.
pub type TraitCoefficients = [[f64; TRAIT_COUNT]; ASSET_COUNT];

pub const TRAIT_COEFFICIENTS: TraitCoefficients = [
    [-0.11, 0.08, -0.15, 0.51, 0.68],
    [-0.15, 0.32, -0.22, -0.36, -0.24],
    [0.82, -0.61, 0.95, 0.42, 0.12],
    [0.16, -0.51, -0.07, -0.80, -0.81],
    [-0.72, 0.72, -0.52, 0.23, 0.25],
];

/// Published prior table, same layout as [`TRAIT_COEFFICIENTS`]. The
/// agreeableness column sums to 0.82 as printed.
pub const PRIOR_TABLE: [[f64; TRAIT_COUNT]; ASSET_COUNT] = [
    [0.00, 0.07, 0.00, 0.44, 0.64],
    [0.00, 0.28, 0.00, 0.00, 0.00],
    [0.84, 0.00, 1.00, 0.36, 0.12],
    [0.16, 0.00, 0.00, 0.00, 0.00],
    [0.00, 0.65, 0.00, 0.02, 0.24],
];

/// Agreeableness mortgage weight restored from the coefficient column.
const AGREEABLENESS_MORTGAGE: f64 = 0.20;

/// A state-independent target allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior([f64; ASSET_COUNT]);

impl Prior {
    pub fn new(weights: [f64; ASSET_COUNT]) -> Result<Self> {
        Allocation::new(weights).map(|a| Self(*a.weights()))
    }

    pub fn weights(&self) -> &[f64; ASSET_COUNT] {
        &self.0
    }

    pub fn as_allocation(&self) -> Allocation {
        Allocation::new(self.0).expect("prior is a valid allocation")
    }
}

/// Where agent priors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// The table, with the agreeableness mortgage entry read as 0.20.
    #[default]
    Table,
    /// The table exactly as printed, each column divided by its sum.
    StrictTable,
    /// Clip-and-normalize of the coefficient columns.
    Derived,
}

impl PriorSource {
    pub fn prior(self, tr: Trait) -> Prior {
        match self {
            PriorSource::Table => {
                let mut w = table_column(tr);
                if tr == Trait::Agreeableness {
                    w[4] = AGREEABLENESS_MORTGAGE;
                }
                renormalize(w)
            }
            PriorSource::StrictTable => renormalize(table_column(tr)),
            PriorSource::Derived => derive_prior(&TRAIT_COEFFICIENTS, tr).expect("every shipped column has a positive entry"),
        }
    }
}

fn table_column(tr: Trait) -> [f64; ASSET_COUNT] {
    std::array::from_fn(|a| PRIOR_TABLE[a][tr.index()])
}

fn renormalize(w: [f64; ASSET_COUNT]) -> Prior {
    let sum: f64 = w.iter().sum();
    Prior::new(w.map(|v| v / sum)).expect("non-negative table column")
}

/// Clips a coefficient column at zero and rescales it to unit sum.
pub fn derive_prior(coefficients: &TraitCoefficients, tr: Trait) -> Result<Prior> {
    let clipped: [f64; ASSET_COUNT] = std::array::from_fn(|a| coefficients[a][tr.index()].max(0.0));
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Derivation(format!("{tr} column has no positive coefficient")));
    }
    Prior::new(clipped.map(|v| v / sum))
}

/// Trait scores in `[-1, 1]`, in O, C, E, A, N order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonalityProfile([f64; TRAIT_COUNT]);

impl PersonalityProfile {
    pub fn new(scores: [f64; TRAIT_COUNT]) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Normalization(format!("trait score {s} outside [-1, 1]")));
        }
        if scores.iter().all(|&s| s <= 0.0) {
            return Err(Error::Normalization("profile has no positive trait score".into()));
        }
        Ok(Self(scores))
    }

    pub fn one_hot(tr: Trait) -> Self {
        let mut s = [0.0; TRAIT_COUNT];
        s[tr.index()] = 1.0;
        Self(s)
    }

    pub fn scores(&self) -> &[f64; TRAIT_COUNT] {
        &self.0
    }
}

impl FromStr for PersonalityProfile {
    type Err = Error;

    /// Parses `O,C,E,A,N` decimal scores.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != TRAIT_COUNT {
            return Err(Error::Config(format!("profile needs {TRAIT_COUNT} comma-separated scores, got `{s}`")));
        }
        let mut scores = [0.0; TRAIT_COUNT];
        for (slot, p) in scores.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Config(format!("profile score `{p}` is not a number")))?;
        }
        Self::new(scores)
    }
}

/// Negative scores clipped to zero, then divided by the total.
pub fn normalize_profile(profile: &PersonalityProfile) -> Result<[f64; TRAIT_COUNT]> {
    let clipped = profile.0.map(|s| s.max(0.0));
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Normalization("profile has no positive trait score".into()));
    }
    Ok(clipped.map(|s| s / sum))
}

/// Weighted sum of per-trait allocations. Summation starts at zero and runs in
/// trait order, so a one-hot weight vector reproduces its action exactly.
pub fn combine_allocations<T: Scalar>(weights: &[T; TRAIT_COUNT], actions: &[[T; ASSET_COUNT]; TRAIT_COUNT]) -> [T; ASSET_COUNT] {
    let mut out = [T::zero(); ASSET_COUNT];
    for (w, action) in weights.iter().zip(actions) {
        for (o, a) in out.iter_mut().zip(action) {
            *o += *w * *a;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn derived_openness_and_neuroticism() {
        let o = derive_prior(&TRAIT_COEFFICIENTS, Trait::Openness).unwrap();
        // 0.82 / 0.98 and 0.16 / 0.98
        assert!(close(o.weights(), &[0.0, 0.0, 0.82 / 0.98, 0.16 / 0.98, 0.0], 1e-15));
        assert!(close(o.weights(), &[0.0, 0.0, 0.8367, 0.1633, 0.0], 1e-4));
        let n = derive_prior(&TRAIT_COEFFICIENTS, Trait::Neuroticism).unwrap();
        assert!(close(n.weights(), &[0.6476, 0.0, 0.1143, 0.0, 0.2381], 1e-4));
    }

    #[test]
    fn derived_extraversion_is_all_stocks() {
        let e = derive_prior(&TRAIT_COEFFICIENTS, Trait::Extraversion).unwrap();
        assert_eq!(e.weights(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_positive_column_cannot_be_derived() {
        let mut c = TRAIT_COEFFICIENTS;
        for row in &mut c {
            row[0] = -0.1;
        }
        assert!(matches!(derive_prior(&c, Trait::Openness), Err(Error::Derivation(_))));
    }

    #[test]
    fn prior_sources() {
        let a = PriorSource::Table.prior(Trait::Agreeableness);
        assert!(close(a.weights(), &[0.44, 0.0, 0.36, 0.0, 0.20], 1e-12));
        let strict = PriorSource::StrictTable.prior(Trait::Agreeableness);
        assert!(close(strict.weights(), &[0.44 / 0.82, 0.0, 0.36 / 0.82, 0.0, 0.02 / 0.82], 1e-12));
        for tr in Trait::ALL {
            for src in [PriorSource::Table, PriorSource::StrictTable, PriorSource::Derived] {
                let w = src.prior(tr);
                assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn profile_normalization() {
        let p = |s| normalize_profile(&PersonalityProfile::new(s).unwrap()).unwrap();
        assert_eq!(p([0.0, 0.0, 1.0, 0.0, 0.0]), [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(p([1.0; 5]), [0.2; 5]);
        let demo = [0.22, 0.87, 0.21, 0.92, 0.49];
        let w = p(demo);
        for (wi, si) in w.iter().zip(demo) {
            assert!((wi - si / 2.71).abs() < 1e-12);
        }
        assert_eq!(p([-0.5, 0.5, 0.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn profile_validation() {
        assert!(matches!(PersonalityProfile::new([-1.0; 5]), Err(Error::Normalization(_))));
        assert!(PersonalityProfile::new([1.5, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!("0.1,0.2,0.3".parse::<PersonalityProfile>().is_err());
        assert!("0.1,x,0.3,0.1,0.1".parse::<PersonalityProfile>().is_err());
        let p: PersonalityProfile = "0.22, 0.87,0.21,0.92,0.49".parse().unwrap();
        assert_eq!(p.scores()[3], 0.92);
    }

    #[test]
    fn combine_midpoint_and_one_hot() {
        let mut actions = [[0.0; 5]; 5];
        actions[0] = [1.0, 0.0, 0.0, 0.0, 0.0];
        actions[1] = [0.0, 1.0, 0.0, 0.0, 0.0];
        let mid = combine_allocations(&[0.5, 0.5, 0.0, 0.0, 0.0], &actions);
        assert_eq!(mid, [0.5, 0.5, 0.0, 0.0, 0.0]);
        actions[2] = [0.1234567, 0.2, 0.3765433, 0.15, 0.15];
        assert_eq!(combine_allocations(&[0.0, 0.0, 1.0, 0.0, 0.0], &actions), actions[2]);
    }

    #[test]
    fn trait_parsing() {
        assert_eq!("E".parse::<Trait>().unwrap(), Trait::Extraversion);
        assert_eq!("neuroticism".parse::<Trait>().unwrap(), Trait::Neuroticism);
        assert!("X".parse::<Trait>().is_err());
    }
}
