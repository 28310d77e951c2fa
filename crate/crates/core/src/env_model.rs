//! Site laws, i.i.d. environment laws with finite support, and realized
//! environment windows.
//!
//! A site law is a probability vector over the jump set `{-L, ..., 0, 1}`.
//! An [`EnvironmentSpec`] is a finite mixture of site laws; a realized
//! environment assigns one atom of the mixture to every integer site as a
//! pure function of `(seed, site)`, so the same site always resolves to the
//! same law no matter which sites were looked at first.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::CompanionMatrix;
use crate::seeding::site_uniform;

/// Tolerance on probability normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("malformed site law: {0}")]
    MalformedLaw(String),
    #[error("invalid site law: {}", format_violations(.0))]
    InvalidLaw(Vec<LawViolation>),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: i64, hi: i64 },
}

fn format_violations(v: &[LawViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One failed site-law invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum LawViolation {
    NotNormalized { sum: f64 },
    ZeroRightJump,
    EllipticityViolated { jump: i64, ratio: f64, kappa: f64 },
    KappaOutOfRange { kappa: f64 },
}

impl LawViolation {
    pub fn name(&self) -> &'static str {
        match self {
            LawViolation::NotNormalized { .. } => "NotNormalized",
            LawViolation::ZeroRightJump => "ZeroRightJump",
            LawViolation::EllipticityViolated { .. } => "EllipticityViolated",
            LawViolation::KappaOutOfRange { .. } => "KappaOutOfRange",
        }
    }
}

impl fmt::Display for LawViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawViolation::NotNormalized { sum } => write!(f, "NotNormalized (sum = {sum})"),
            LawViolation::ZeroRightJump => write!(f, "ZeroRightJump (probability of +1 is 0)"),
            LawViolation::EllipticityViolated { jump, ratio, kappa } => write!(
                f,
                "EllipticityViolated (p({jump})/p(1) = {ratio} <= kappa = {kappa})"
            ),
            LawViolation::KappaOutOfRange { kappa } => {
                write!(f, "KappaOutOfRange (kappa = {kappa}, need 0 <= kappa < 1)")
            }
        }
    }
}

/// Jump distribution at one site, over `{-L, ..., 0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLaw {
    max_left: usize,
    // index i holds the probability of jump i - L
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl SiteLaw {
    /// `probs[i]` is the probability of jump `i - max_left`; length must be
    /// `max_left + 2`. Only shape and sign are checked here, see
    /// [`validate_site_law`] for the model invariants.
    pub fn new(max_left: usize, probs: Vec<f64>) -> Result<Self, EnvError> {
        if max_left == 0 {
            return Err(EnvError::MalformedLaw("max left jump L must be >= 1".into()));
        }
        if probs.len() != max_left + 2 {
            return Err(EnvError::MalformedLaw(format!(
                "expected {} probabilities for L = {max_left}, got {}",
                max_left + 2,
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(EnvError::MalformedLaw(format!("probability {p} outside [0, 1]")));
        }
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { max_left, probs, cdf })
    }

    /// Build from `(jump, probability)` pairs; missing jumps get probability 0.
    pub fn from_jumps(max_left: usize, jumps: &[(i64, f64)]) -> Result<Self, EnvError> {
        let mut probs = vec![0.0; max_left + 2];
        for &(z, p) in jumps {
            if z < -(max_left as i64) || z > 1 {
                return Err(EnvError::MalformedLaw(format!(
                    "jump {z} outside {{-{max_left}, ..., 1}}"
                )));
            }
            probs[(z + max_left as i64) as usize] += p;
        }
        Self::new(max_left, probs)
    }

    /// Nearest-neighbour law with ratio `p(-1)/p(1) = rho` and no holding.
    pub fn nearest_neighbor(rho: f64) -> Result<Self, EnvError> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(EnvError::MalformedLaw(format!("rho = {rho} must be finite and >= 0")));
        }
        Self::new(1, vec![rho / (1.0 + rho), 0.0, 1.0 / (1.0 + rho)])
    }

    pub fn max_left(&self) -> usize {
        self.max_left
    }

    pub fn prob(&self, jump: i64) -> f64 {
        let idx = jump + self.max_left as i64;
        if idx < 0 || idx as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[idx as usize]
        }
    }

    /// Probabilities indexed from jump `-L` up to jump `+1`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(jump, probability)` pairs from `-L` to `+1`.
    pub fn jumps(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let l = self.max_left as i64;
        self.probs.iter().enumerate().map(move |(i, &p)| (i as i64 - l, p))
    }

    /// Inverse-CDF jump for a uniform `u` in [0, 1).
    #[inline]
    pub fn sample_jump(&self, u: f64) -> i64 {
        let scaled = u * self.cdf[self.cdf.len() - 1];
        let idx = self
            .cdf
            .iter()
            .position(|&c| scaled < c)
            .unwrap_or_else(|| self.last_positive());
        idx as i64 - self.max_left as i64
    }

    fn last_positive(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(self.probs.len() - 1)
    }

    /// The same law seen through the reflection `x -> -x`, defined for `L = 1` only.
    pub fn mirrored(&self) -> Result<Self, EnvError> {
        if self.max_left != 1 {
            return Err(EnvError::MalformedLaw("mirroring requires L = 1".into()));
        }
        Self::new(1, vec![self.probs[2], self.probs[1], self.probs[0]])
    }
}

/// Check a site law against the model invariants for ellipticity constant
/// `kappa`. `kappa = 0` disables the ellipticity check (used for degenerate
/// laws such as the deterministic right-moving walk).
pub fn validate_site_law(law: &SiteLaw, kappa: f64) -> Result<(), Vec<LawViolation>> {
    let mut violations = Vec::new();
    if !(0.0..1.0).contains(&kappa) {
        violations.push(LawViolation::KappaOutOfRange { kappa });
    }
    let sum: f64 = law.probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        violations.push(LawViolation::NotNormalized { sum });
    }
    let right = law.prob(1);
    if right <= 0.0 {
        violations.push(LawViolation::ZeroRightJump);
    } else if kappa > 0.0 {
        // z = 0 is unconstrained; z = 1 has ratio 1 > kappa.
        for z in -(law.max_left as i64)..0 {
            let ratio = law.prob(z) / right;
            if ratio <= kappa {
                violations.push(LawViolation::EllipticityViolated { jump: z, ratio, kappa });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub law: SiteLaw,
    pub weight: f64,
}

/// Finite-support i.i.d. environment law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct EnvironmentSpec {
    max_left: usize,
    kappa: f64,
    atoms: Vec<Atom>,
    cum_weights: Vec<f64>,
    matrices: Vec<CompanionMatrix>,
}

impl EnvironmentSpec {
    pub fn new(max_left: usize, kappa: f64, atoms: Vec<Atom>) -> Result<Self, EnvError> {
        if atoms.is_empty() {
            return Err(EnvError::InvalidSpec("at least one atom is required".into()));
        }
        let mut violations = Vec::new();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.law.max_left() != max_left {
                return Err(EnvError::InvalidSpec(format!(
                    "atom {i} has L = {} but spec has L = {max_left}",
                    atom.law.max_left()
                )));
            }
            if !(atom.weight.is_finite() && atom.weight >= 0.0) {
                return Err(EnvError::InvalidSpec(format!(
                    "atom {i} has weight {}",
                    atom.weight
                )));
            }
            if let Err(v) = validate_site_law(&atom.law, kappa) {
                violations.extend(v);
            }
        }
        if !violations.is_empty() {
            violations.dedup();
            return Err(EnvError::InvalidLaw(violations));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(EnvError::InvalidSpec(format!("atom weights sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let mut cum_weights: Vec<f64> = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        // Close the last positive-weight bucket at exactly 1.
        if let Some(last) = atoms.iter().rposition(|a| a.weight > 0.0) {
            for c in cum_weights.iter_mut().skip(last) {
                *c = f64::INFINITY;
            }
        }
        let matrices = atoms.iter().map(|a| CompanionMatrix::from_law(&a.law)).collect();
        Ok(Self { max_left, kappa, atoms, cum_weights, matrices })
    }

    /// Single-atom environment.
    pub fn point_mass(law: SiteLaw, kappa: f64) -> Result<Self, EnvError> {
        let l = law.max_left();
        Self::new(l, kappa, vec![Atom { law, weight: 1.0 }])
    }

    /// Nearest-neighbour spec from `(rho, weight)` pairs, with `kappa` taken
    /// as half the smallest ratio.
    pub fn nearest_neighbor(rhos: &[(f64, f64)]) -> Result<Self, EnvError> {
        let atoms = rhos
            .iter()
            .map(|&(rho, weight)| Ok(Atom { law: SiteLaw::nearest_neighbor(rho)?, weight }))
            .collect::<Result<Vec<_>, EnvError>>()?;
        let min_rho = rhos.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        Self::new(1, (0.5 * min_rho).min(0.5), atoms)
    }

    pub fn max_left(&self) -> usize {
        self.max_left
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn matrices(&self) -> &[CompanionMatrix] {
        &self.matrices
    }

    /// Atom selected by a uniform draw.
    #[inline]
    pub fn atom_for_uniform(&self, u: f64) -> usize {
        self.cum_weights.iter().position(|&c| u < c).unwrap_or(self.atoms.len() - 1)
    }

    /// Indices of atoms with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].weight > 0.0).collect()
    }

    /// Reflected spec (`rho -> 1/rho`), `L = 1` only.
    pub fn mirrored(&self) -> Result<Self, EnvError> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Ok(Atom { law: a.law.mirrored()?, weight: a.weight }))
            .collect::<Result<Vec<_>, EnvError>>()?;
        let min_ratio = atoms
            .iter()
            .map(|a: &Atom| a.law.prob(-1) / a.law.prob(1))
            .fold(f64::INFINITY, f64::min);
        let kappa = if self.kappa == 0.0 { 0.0 } else { (0.5 * min_ratio).min(0.5) };
        Self::new(1, kappa, atoms)
    }

    pub fn from_json_str(s: &str) -> Result<Self, SpecParseError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct SpecParseError(#[from] serde_json::Error);

impl SpecParseError {
    /// The underlying validation error, when parsing failed on model invariants.
    pub fn is_data_error(&self) -> bool {
        self.0.is_data()
    }
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    #[serde(rename = "L")]
    max_left: usize,
    kappa: f64,
    atoms: Vec<AtomFile>,
}

#[derive(Serialize, Deserialize)]
struct AtomFile {
    weight: f64,
    probs: BTreeMap<String, f64>,
}

impl TryFrom<SpecFile> for EnvironmentSpec {
    type Error = EnvError;

    fn try_from(file: SpecFile) -> Result<Self, EnvError> {
        let atoms = file
            .atoms
            .into_iter()
            .map(|a| {
                let jumps = a
                    .probs
                    .iter()
                    .map(|(k, &p)| {
                        k.trim()
                            .parse::<i64>()
                            .map(|z| (z, p))
                            .map_err(|_| EnvError::MalformedLaw(format!("jump key {k:?} is not an integer")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Atom { law: SiteLaw::from_jumps(file.max_left, &jumps)?, weight: a.weight })
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        EnvironmentSpec::new(file.max_left, file.kappa, atoms)
    }
}

impl From<EnvironmentSpec> for SpecFile {
    fn from(spec: EnvironmentSpec) -> Self {
        SpecFile {
            max_left: spec.max_left,
            kappa: spec.kappa,
            atoms: spec
                .atoms
                .iter()
                .map(|a| AtomFile {
                    weight: a.weight,
                    probs: a.law.jumps().map(|(z, p)| (z.to_string(), p)).collect(),
                })
                .collect(),
        }
    }
}

/// Read access to a realized environment.
pub trait Environment: Sync {
    fn spec(&self) -> &EnvironmentSpec;

    /// Atom index carried by site `x`.
    fn atom(&self, x: i64) -> usize;

    #[inline]
    fn law(&self, x: i64) -> &SiteLaw {
        &self.spec().atoms[self.atom(x)].law
    }

    #[inline]
    fn matrix(&self, x: i64) -> &CompanionMatrix {
        &self.spec().matrices[self.atom(x)]
    }

    fn max_left(&self) -> usize {
        self.spec().max_left
    }
}

/// An environment realized over `[lo, hi]`.
///
/// Sites outside the stored interval resolve through the same pure
/// `(seed, site)` function, so reads never need mutation and
/// [`EnvironmentWindow::extend`] only caches what reads would return anyway.
#[derive(Debug, Clone)]
pub struct EnvironmentWindow {
    spec: Arc<EnvironmentSpec>,
    seed: u64,
    lo: i64,
    hi: i64,
    atoms: Vec<u32>,
}

pub fn sample_environment(
    spec: Arc<EnvironmentSpec>,
    lo: i64,
    hi: i64,
    seed: u64,
) -> Result<EnvironmentWindow, EnvError> {
    if lo > hi {
        return Err(EnvError::InvalidInterval { lo, hi });
    }
    let atoms = (lo..=hi).map(|x| resolve_atom(&spec, seed, x) as u32).collect();
    Ok(EnvironmentWindow { spec, seed, lo, hi, atoms })
}

#[inline]
fn resolve_atom(spec: &EnvironmentSpec, seed: u64, x: i64) -> usize {
    if spec.atoms.len() == 1 {
        0
    } else {
        spec.atom_for_uniform(site_uniform(seed, x))
    }
}

impl EnvironmentWindow {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interval(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn spec_arc(&self) -> &Arc<EnvironmentSpec> {
        &self.spec
    }

    /// Grow the realized interval to cover `[lo, hi]`. Already realized sites
    /// are left untouched.
    pub fn extend(&mut self, lo: i64, hi: i64) {
        if lo < self.lo {
            let mut front: Vec<u32> =
                (lo..self.lo).map(|x| resolve_atom(&self.spec, self.seed, x) as u32).collect();
            front.extend_from_slice(&self.atoms);
            self.atoms = front;
            self.lo = lo;
        }
        if hi > self.hi {
            let spec = &self.spec;
            let seed = self.seed;
            self.atoms.extend((self.hi + 1..=hi).map(|x| resolve_atom(spec, seed, x) as u32));
            self.hi = hi;
        }
    }

    /// Atom indices stored for `[lo, hi]`.
    pub fn realized(&self) -> &[u32] {
        &self.atoms
    }

    /// View with site `x` mapped to this window's site `x + k`.
    pub fn shifted(&self, k: i64) -> ShiftedView<'_, Self> {
        ShiftedView { inner: self, offset: k }
    }
}

impl Environment for EnvironmentWindow {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    #[inline]
    fn atom(&self, x: i64) -> usize {
        if x >= self.lo && x <= self.hi {
            self.atoms[(x - self.lo) as usize] as usize
        } else {
            resolve_atom(&self.spec, self.seed, x)
        }
    }
}

/// Shift `T^k`: site `x` of the view is site `x + k` of the underlying
/// environment. Borrowing only, nothing is copied.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedView<'a, E: Environment> {
    inner: &'a E,
    offset: i64,
}

pub fn shifted_view<E: Environment>(env: &E, k: i64) -> ShiftedView<'_, E> {
    ShiftedView { inner: env, offset: k }
}

impl<'a, E: Environment> ShiftedView<'a, E> {
    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// Compose shifts without nesting views.
    pub fn shifted(&self, k: i64) -> ShiftedView<'a, E> {
        ShiftedView { inner: self.inner, offset: self.offset + k }
    }
}

impl<E: Environment> Environment for ShiftedView<'_, E> {
    fn spec(&self) -> &EnvironmentSpec {
        self.inner.spec()
    }

    #[inline]
    fn atom(&self, x: i64) -> usize {
        self.inner.atom(x + self.offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law(l: usize, jumps: &[(i64, f64)]) -> SiteLaw {
        SiteLaw::from_jumps(l, jumps).unwrap()
    }

    #[test]
    fn valid_law_passes() {
        let l = law(1, &[(-1, 0.3), (0, 0.2), (1, 0.5)]);
        assert_eq!(validate_site_law(&l, 0.1), Ok(()));
    }

    #[test]
    fn zero_right_jump_rejected() {
        let l = law(1, &[(-1, 0.5), (0, 0.5), (1, 0.0)]);
        let v = validate_site_law(&l, 0.1).unwrap_err();
        assert_eq!(v, vec![LawViolation::ZeroRightJump]);
    }

    #[test]
    fn unnormalized_law_rejected_for_any_kappa() {
        let l = law(1, &[(-1, 0.2), (0, 0.2), (1, 0.2)]);
        for kappa in [0.0, 0.1, 0.5, 0.9] {
            let v = validate_site_law(&l, kappa).unwrap_err();
            assert!(v.iter().any(|x| matches!(x, LawViolation::NotNormalized { .. })));
        }
    }

    #[test]
    fn ellipticity_violation_lists_each_jump() {
        let l = law(2, &[(-2, 0.01), (-1, 0.01), (0, 0.48), (1, 0.5)]);
        let v = validate_site_law(&l, 0.1).unwrap_err();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.name() == "EllipticityViolated"));
        // p(0) is never constrained
        let l = law(1, &[(-1, 0.4), (0, 0.0), (1, 0.6)]);
        assert!(validate_site_law(&l, 0.5).is_ok());
    }

    #[test]
    fn kappa_at_least_one_rejected() {
        let l = law(1, &[(-1, 0.5), (1, 0.5)]);
        let v = validate_site_law(&l, 1.0).unwrap_err();
        assert_eq!(v[0].name(), "KappaOutOfRange");
    }

    #[test]
    fn malformed_laws() {
        assert!(SiteLaw::new(1, vec![0.5, 0.5]).is_err());
        assert!(SiteLaw::new(1, vec![-0.1, 0.6, 0.5]).is_err());
        assert!(SiteLaw::from_jumps(1, &[(2, 0.5)]).is_err());
        assert!(SiteLaw::new(0, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn single_atom_fills_every_site() {
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&[(0.5, 1.0)]).unwrap());
        let env = sample_environment(spec, -50, 50, 11).unwrap();
        assert!(env.realized().iter().all(|&a| a == 0));
        assert_eq!(env.atom(10_000), 0);
    }

    #[test]
    fn degenerate_weights_pick_atom_zero() {
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&[(0.5, 1.0), (2.0, 0.0)]).unwrap());
        let env = sample_environment(spec, -500, 500, 3).unwrap();
        assert!(env.realized().iter().all(|&a| a == 0));
    }

    #[test]
    fn zero_weight_first_atom_never_chosen() {
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&[(0.5, 0.0), (2.0, 1.0)]).unwrap());
        let env = sample_environment(spec, -500, 500, 3).unwrap();
        assert!(env.realized().iter().all(|&a| a == 1));
    }

    #[test]
    fn bad_interval_and_bad_weights() {
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&[(0.5, 1.0)]).unwrap());
        assert!(sample_environment(spec, 3, 2, 0).is_err());
        assert!(EnvironmentSpec::nearest_neighbor(&[(0.5, 0.6), (2.0, 0.6)]).is_err());
        assert!(EnvironmentSpec::new(1, 0.1, vec![]).is_err());
    }

    #[test]
    fn json_round_trip_and_key_format() {
        let spec = EnvironmentSpec::new(
            2,
            0.1,
            vec![
                Atom { law: law(2, &[(-2, 0.1), (-1, 0.2), (0, 0.2), (1, 0.5)]), weight: 0.25 },
                Atom { law: law(2, &[(-2, 0.2), (-1, 0.1), (0, 0.1), (1, 0.6)]), weight: 0.75 },
            ],
        )
        .unwrap();
        let text = spec.to_json_string();
        assert!(text.contains("\"-2\""));
        assert!(text.contains("\"L\": 2"));
        let back = EnvironmentSpec::from_json_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn json_rejects_invalid_law() {
        let text = r#"{"L": 1, "kappa": 0.1, "atoms": [{"weight": 1.0, "probs": {"-1": 0.2, "0": 0.2, "1": 0.2}}]}"#;
        let err = EnvironmentSpec::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("NotNormalized"));
    }

    #[test]
    fn chi_square_atom_frequencies() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let weights = [0.2, 0.5, 0.3];
        let spec = Arc::new(
            EnvironmentSpec::nearest_neighbor(&[(0.5, weights[0]), (1.0, weights[1]), (2.0, weights[2])])
                .unwrap(),
        );
        let m = 100_000;
        let env = sample_environment(spec, 0, m - 1, 2024).unwrap();
        let mut counts = [0usize; 3];
        for &a in env.realized() {
            counts[a as usize] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(weights)
            .map(|(&c, w)| {
                let e = w * m as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi-square {stat} >= {crit}");
    }

    proptest! {
        #[test]
        fn extension_is_monotone_and_order_independent(
            seed in any::<u64>(), lo in -200i64..0, hi in 0i64..200, grow in 1i64..100
        ) {
            let spec = Arc::new(
                EnvironmentSpec::nearest_neighbor(&[(0.25, 0.5), (2.0, 0.5)]).unwrap(),
            );
            let mut env = sample_environment(spec.clone(), lo, hi, seed).unwrap();
            let before = env.realized().to_vec();
            env.extend(lo - grow, hi + grow);
            prop_assert_eq!(&env.realized()[grow as usize..grow as usize + before.len()], &before[..]);
            let direct = sample_environment(spec, lo - grow, hi + grow, seed).unwrap();
            prop_assert_eq!(direct.realized(), env.realized());
        }

        #[test]
        fn shifts_compose(seed in any::<u64>(), a in -50i64..50, b in -50i64..50, x in -100i64..100) {
            let spec = Arc::new(
                EnvironmentSpec::nearest_neighbor(&[(0.25, 0.3), (2.0, 0.3), (1.0, 0.4)]).unwrap(),
            );
            let env = sample_environment(spec, -200, 200, seed).unwrap();
            prop_assert_eq!(env.shifted(0).atom(x), env.atom(x));
            prop_assert_eq!(env.shifted(a).atom(x), env.atom(x + a));
            prop_assert_eq!(env.shifted(a).shifted(-a).atom(x), env.atom(x));
            prop_assert_eq!(env.shifted(a).shifted(b).atom(x), env.shifted(a + b).atom(x));
            prop_assert_eq!(shifted_view(&env, a).atom(x), env.atom(x + a));
        }
    }
}
