//! Acceptance-probability sources and token-level verification.
//!
//! Scheduling only needs the conditional acceptance probability of every
//! drafted cell `(row, depth)`. Those probabilities come from an explicit
//! matrix, a seeded generator, or (for the micro-verifier) from a pair of
//! draft/target token distributions.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Lower/upper clamp applied to surrogate estimates.
pub const SURROGATE_EPS: f64 = 1e-6;

/// Tolerance on the sum of a [`TokenDistribution`].
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

fn check_prob(p: f64, what: &str) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} {p} is not a probability in [0, 1]")))
    }
}

/// Conditional acceptance probabilities, one row per request.
///
/// Entry `(i, j)` is the probability that the token at depth `j + 1` of row
/// `i` is accepted given that every earlier token in the row was accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AcceptanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl AcceptanceMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidArgument(format!("row {i} has no drafted depth")));
            }
            for (j, &p) in row.iter().enumerate() {
                check_prob(p, &format!("alpha[{i}][{j}]"))?;
            }
        }
        Ok(Self { rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn depth(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn total_cells(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

impl TryFrom<Vec<Vec<f64>>> for AcceptanceMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<AcceptanceMatrix> for Vec<Vec<f64>> {
    fn from(m: AcceptanceMatrix) -> Self {
        m.rows
    }
}

/// Every row gets the same rate at every depth.
pub fn make_constant_row_model(alphas: &[f64], depth: usize) -> Result<AcceptanceMatrix> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    for &a in alphas {
        check_prob(a, "alpha")?;
    }
    AcceptanceMatrix::new(alphas.iter().map(|&a| vec![a; depth]).collect())
}

/// Where acceptance probabilities come from.
///
/// Serialized with a `kind` tag, e.g. `{"kind":"beta","a":1.0,"b":1.0,"per_row":false}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcceptanceSource {
    /// Fixed rates. Batch row `i` reads matrix row `i mod rows`; depths past
    /// the end of a row repeat its last entry.
    Matrix { rows: AcceptanceMatrix },
    /// Beta(a, b) draws, either one per cell or one per row held constant
    /// across depths.
    Beta {
        a: f64,
        b: f64,
        #[serde(default)]
        per_row: bool,
    },
    /// Each row is independently "easy" with probability `frac` and then has
    /// constant rate `easy`, otherwise constant rate `hard`.
    Mix { easy: f64, hard: f64, frac: f64 },
    /// Batch row `i` takes pair `i mod pairs` and gets its implied acceptance
    /// probability at every depth.
    Implied { pairs: Vec<DistributionPair> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionPair {
    pub draft: TokenDistribution,
    pub target: TokenDistribution,
}

impl AcceptanceSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcceptanceSource::Matrix { rows } => {
                if rows.num_rows() == 0 {
                    return Err(Error::InvalidArgument("matrix source needs at least one row".into()));
                }
                Ok(())
            }
            AcceptanceSource::Beta { a, b, .. } => {
                if !(a.is_finite() && *a > 0.0 && b.is_finite() && *b > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "beta parameters must be positive, got a={a}, b={b}"
                    )));
                }
                Ok(())
            }
            AcceptanceSource::Mix { easy, hard, frac } => {
                check_prob(*easy, "mix easy rate")?;
                check_prob(*hard, "mix hard rate")?;
                check_prob(*frac, "mix easy fraction")
            }
            AcceptanceSource::Implied { pairs } => {
                if pairs.is_empty() {
                    return Err(Error::InvalidArgument("implied source needs at least one pair".into()));
                }
                match pairs.iter().position(|p| p.draft.vocab_size() != p.target.vocab_size()) {
                    Some(i) => Err(Error::InvalidArgument(format!("pair {i}: draft and target vocabularies differ"))),
                    None => Ok(()),
                }
            }
        }
    }

    /// Draws one row of `depth` rates. `row` only matters for matrix sources.
    pub fn sample_row<R: Rng + ?Sized>(&self, row: usize, depth: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            AcceptanceSource::Matrix { rows } => {
                let src = rows.row(row % rows.num_rows());
                let last = *src.last().expect("rows are non-empty");
                Ok((0..depth).map(|j| src.get(j).copied().unwrap_or(last)).collect())
            }
            AcceptanceSource::Beta { a, b, per_row } => {
                let beta = Beta::new(*a, *b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                if *per_row {
                    Ok(vec![beta.sample(rng); depth])
                } else {
                    Ok((0..depth).map(|_| beta.sample(rng)).collect())
                }
            }
            AcceptanceSource::Mix { easy, hard, frac } => {
                let rate = if rng.random::<f64>() < *frac { *easy } else { *hard };
                Ok(vec![rate; depth])
            }
            AcceptanceSource::Implied { pairs } => {
                let pair = &pairs[row % pairs.len()];
                Ok(vec![implied_acceptance_prob(&pair.draft, &pair.target); depth])
            }
        }
    }
}

/// Draws an `n x depth` matrix from `source`, rows in order from one stream.
pub fn sample_acceptance_matrix<R: Rng + ?Sized>(
    source: &AcceptanceSource,
    n: usize,
    depth: usize,
    rng: &mut R,
) -> Result<AcceptanceMatrix> {
    if n == 0 || depth == 0 {
        return Err(Error::InvalidArgument("need at least one row and one depth".into()));
    }
    source.validate()?;
    let rows = (0..n)
        .map(|i| source.sample_row(i, depth, rng))
        .collect::<Result<Vec<_>>>()?;
    AcceptanceMatrix::new(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    None,
    LogitGaussian,
}

/// How the selector's view of acceptance rates deviates from the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::None,
            sigma: 0.0,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise == NoiseModel::None || self.sigma == 0.0
    }
}

/// Noisy copy of `truth` as seen by a selector.
///
/// Logit-gaussian noise perturbs `ln(p / (1 - p))` by `N(0, sigma^2)` and the
/// result is clamped to `[eps, 1 - eps]`. Each row uses its own stream, so the
/// noise on row `i` does not depend on how deep other rows were drafted.
pub fn surrogate_estimates(truth: &AcceptanceMatrix, cfg: &SurrogateConfig) -> Result<AcceptanceMatrix> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(truth.clone());
    }
    let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows = truth
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = stream_rng(cfg.seed, Stream::Surrogate, 0, i as u64);
            row.iter()
                .map(|&p| {
                    let p = p.clamp(SURROGATE_EPS, 1.0 - SURROGATE_EPS);
                    let logit = (p / (1.0 - p)).ln() + normal.sample(&mut rng);
                    (1.0 / (1.0 + (-logit).exp())).clamp(SURROGATE_EPS, 1.0 - SURROGATE_EPS)
                })
                .collect()
        })
        .collect();
    AcceptanceMatrix::new(rows)
}

/// Probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    /// Inverse-CDF sample for `u` in `[0, 1)`. Zero-mass tokens are never returned.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (t, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = t;
                if u < acc {
                    return t;
                }
            }
        }
        last_positive
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    Rejected,
}

fn check_same_vocab(draft: &TokenDistribution, target: &TokenDistribution) -> Result<()> {
    if draft.vocab_size() != target.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "vocabulary mismatch: draft has {}, target has {}",
            draft.vocab_size(),
            target.vocab_size()
        )));
    }
    Ok(())
}

/// Probability that a drafted `token` survives verification: `min(1, pM/pS)`.
pub fn acceptance_threshold(draft: &TokenDistribution, target: &TokenDistribution, token: usize) -> Result<f64> {
    check_same_vocab(draft, target)?;
    if token >= draft.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "token {token} out of range for vocabulary of {}",
            draft.vocab_size()
        )));
    }
    let (ps, pm) = (draft.prob(token), target.prob(token));
    Ok(if ps <= pm { 1.0 } else { pm / ps })
}

/// Rejection-sampling rule: accept if `pS(d) <= pM(d)`, otherwise accept
/// when `u < pM(d) / pS(d)`.
pub fn verify_token(draft: &TokenDistribution, target: &TokenDistribution, token: usize, u: f64) -> Result<Verdict> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} not in [0, 1)")));
    }
    let (ps, pm) = (draft.probs.get(token), target.probs.get(token));
    check_same_vocab(draft, target)?;
    let (Some(&ps), Some(&pm)) = (ps, pm) else {
        return Err(Error::InvalidArgument(format!(
            "token {token} out of range for vocabulary of {}",
            draft.vocab_size()
        )));
    };
    if ps <= pm || u < pm / ps {
        Ok(Verdict::Accepted)
    } else {
        Ok(Verdict::Rejected)
    }
}

/// `norm(max(0, pM - pS))`, the distribution sampled after a rejection.
pub fn residual_distribution(draft: &TokenDistribution, target: &TokenDistribution) -> Result<TokenDistribution> {
    check_same_vocab(draft, target)?;
    let diff: Vec<f64> = target
        .probs
        .iter()
        .zip(&draft.probs)
        .map(|(pm, ps)| (pm - ps).max(0.0))
        .collect();
    let mass: f64 = diff.iter().sum();
    if mass <= 0.0 {
        return Err(Error::DegenerateResidual);
    }
    TokenDistribution::new(diff.into_iter().map(|d| d / mass).collect())
}

/// Marginal acceptance probability of a drafted token: `sum_d min(pS(d), pM(d))`.
pub fn implied_acceptance_prob(draft: &TokenDistribution, target: &TokenDistribution) -> f64 {
    assert_eq!(draft.vocab_size(), target.vocab_size(), "vocabulary mismatch");
    let s: f64 = draft.probs.iter().zip(&target.probs).map(|(a, b)| a.min(*b)).sum();
    s.clamp(0.0, 1.0)
}

/// One draft-then-verify round: returns the emitted token and whether it was
/// the drafted one.
pub fn speculative_sample<R: Rng + ?Sized>(
    draft: &TokenDistribution,
    target: &TokenDistribution,
    rng: &mut R,
) -> Result<(usize, Verdict)> {
    let token = draft.sample_with(rng.random());
    match verify_token(draft, target, token, rng.random())? {
        Verdict::Accepted => Ok((token, Verdict::Accepted)),
        Verdict::Rejected => {
            let residual = residual_distribution(draft, target)?;
            Ok((residual.sample_with(rng.random()), Verdict::Rejected))
        }
    }
}

/// Exact law of the token emitted by [`speculative_sample`], by enumerating
/// every drafted token and both verification outcomes.
pub fn output_law(draft: &TokenDistribution, target: &TokenDistribution) -> Result<Vec<f64>> {
    check_same_vocab(draft, target)?;
    let v = draft.vocab_size();
    let mut law = vec![0.0; v];
    let mut reject_mass = 0.0;
    for d in 0..v {
        let ps = draft.prob(d);
        if ps == 0.0 {
            continue;
        }
        let accept = acceptance_threshold(draft, target, d)?;
        law[d] += ps * accept;
        reject_mass += ps * (1.0 - accept);
    }
    if reject_mass > 0.0 {
        let residual = residual_distribution(draft, target)?;
        for (x, r) in law.iter_mut().zip(residual.probs()) {
            *x += reject_mass * r;
        }
    }
    Ok(law)
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn constant_row_model() {
        let m = make_constant_row_model(&[0.7, 0.7], 3).unwrap();
        assert_eq!(m.rows(), &[vec![0.7; 3], vec![0.7; 3]]);
        let m = make_constant_row_model(&[1.0], 2).unwrap();
        assert_eq!(m.rows(), &[vec![1.0, 1.0]]);
        let m = make_constant_row_model(&[0.9, 0.5], 2).unwrap();
        assert_eq!(m.rows(), &[vec![0.9, 0.9], vec![0.5, 0.5]]);
        assert!(matches!(make_constant_row_model(&[1.2], 2), Err(Error::InvalidArgument(_))));
        assert!(make_constant_row_model(&[0.5], 0).is_err());
    }

    #[test]
    fn matrix_rejects_bad_entries() {
        assert!(AcceptanceMatrix::new(vec![vec![]]).is_err());
        assert!(AcceptanceMatrix::new(vec![vec![f64::NAN]]).is_err());
        assert!(AcceptanceMatrix::new(vec![vec![-0.1]]).is_err());
    }

    #[test]
    fn beta_sampling_is_reproducible() {
        let src = AcceptanceSource::Beta { a: 1.0, b: 1.0, per_row: false };
        let a = sample_acceptance_matrix(&src, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_acceptance_matrix(&src, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_cells(), 4);
        assert!(a.rows().iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn per_row_beta_is_constant_across_depth() {
        let src = AcceptanceSource::Beta { a: 5.0, b: 1.0, per_row: true };
        let m = sample_acceptance_matrix(&src, 3, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for row in m.rows() {
            assert!(row.iter().all(|&p| p == row[0]));
        }
    }

    #[test]
    fn mix_rows_take_one_of_two_rates() {
        let src = AcceptanceSource::Mix { easy: 0.95, hard: 0.4, frac: 0.5 };
        let m = sample_acceptance_matrix(&src, 64, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let easy = m.rows().iter().filter(|r| r.iter().all(|&p| p == 0.95)).count();
        let hard = m.rows().iter().filter(|r| r.iter().all(|&p| p == 0.4)).count();
        assert_eq!(easy + hard, 64);
        // Binomial(64, 0.5): 4 sigma is 16 rows.
        assert!((16..=48).contains(&easy), "easy rows = {easy}");
    }

    #[test]
    fn invalid_generator_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = AcceptanceSource::Beta { a: 0.0, b: 1.0, per_row: false };
        assert!(sample_acceptance_matrix(&bad, 1, 1, &mut rng).is_err());
        let bad = AcceptanceSource::Mix { easy: 1.5, hard: 0.4, frac: 0.5 };
        assert!(sample_acceptance_matrix(&bad, 1, 1, &mut rng).is_err());
        let ok = AcceptanceSource::Mix { easy: 0.9, hard: 0.4, frac: 0.5 };
        assert!(sample_acceptance_matrix(&ok, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn matrix_source_repeats_last_entry() {
        let src = AcceptanceSource::Matrix {
            rows: AcceptanceMatrix::new(vec![vec![0.9, 0.8], vec![0.1]]).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(src.sample_row(0, 4, &mut rng).unwrap(), vec![0.9, 0.8, 0.8, 0.8]);
        assert_eq!(src.sample_row(3, 2, &mut rng).unwrap(), vec![0.1, 0.1]);
    }

    #[test]
    fn source_json_shapes() {
        let s: AcceptanceSource = serde_json::from_str(r#"{"kind":"matrix","rows":[[0.5,0.25]]}"#).unwrap();
        assert!(matches!(s, AcceptanceSource::Matrix { .. }));
        let s: AcceptanceSource = serde_json::from_str(r#"{"kind":"beta","a":1.0,"b":1.0,"per_row":false}"#).unwrap();
        assert_eq!(s, AcceptanceSource::Beta { a: 1.0, b: 1.0, per_row: false });
        let s: AcceptanceSource = serde_json::from_str(r#"{"kind":"mix","easy":0.95,"hard":0.4,"frac":0.5}"#).unwrap();
        assert_eq!(s, AcceptanceSource::Mix { easy: 0.95, hard: 0.4, frac: 0.5 });
        assert!(serde_json::from_str::<AcceptanceSource>(r#"{"kind":"matrix","rows":[[1.5]]}"#).is_err());
    }

    #[test]
    fn surrogate_identity_and_range() {
        let truth = AcceptanceMatrix::new(vec![vec![1.0, 0.3], vec![0.0]]).unwrap();
        let same = surrogate_estimates(&truth, &SurrogateConfig::default()).unwrap();
        assert_eq!(same, truth);
        let zero_sigma = SurrogateConfig { noise: NoiseModel::LogitGaussian, sigma: 0.0, seed: 4 };
        assert_eq!(surrogate_estimates(&truth, &zero_sigma).unwrap(), truth);

        let cfg = SurrogateConfig { noise: NoiseModel::LogitGaussian, sigma: 0.5, seed: 9 };
        let a = surrogate_estimates(&truth, &cfg).unwrap();
        let b = surrogate_estimates(&truth, &cfg).unwrap();
        assert_eq!(a, b);
        for p in a.rows().iter().flatten() {
            assert!(*p > 0.0 && *p < 1.0);
            assert!(*p >= SURROGATE_EPS && *p <= 1.0 - SURROGATE_EPS);
        }
        assert!(a.row(0)[0] <= 1.0 - SURROGATE_EPS);

        let neg = SurrogateConfig { sigma: -1.0, ..cfg };
        assert!(surrogate_estimates(&truth, &neg).is_err());
    }

    #[test]
    fn verify_token_rule() {
        let ps = dist(&[0.2, 0.8]);
        let pm = dist(&[0.5, 0.5]);
        for u in [0.0, 0.5, 0.999] {
            assert_eq!(verify_token(&ps, &pm, 0, u).unwrap(), Verdict::Accepted);
        }
        let ps = dist(&[0.5, 0.5]);
        let pm = dist(&[0.2, 0.8]);
        assert_eq!(verify_token(&ps, &pm, 0, 0.39).unwrap(), Verdict::Accepted);
        assert_eq!(verify_token(&ps, &pm, 0, 0.41).unwrap(), Verdict::Rejected);
        let p = dist(&[0.3, 0.7]);
        assert_eq!(verify_token(&p, &p, 0, 0.99).unwrap(), Verdict::Accepted);
        assert!(verify_token(&p, &p, 2, 0.5).is_err());
        assert!(verify_token(&p, &p, 0, 1.0).is_err());
    }

    #[test]
    fn residual() {
        let r = residual_distribution(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.8])).unwrap();
        assert_eq!(r.probs(), &[0.0, 1.0]);
        let r = residual_distribution(&dist(&[0.25, 0.25, 0.5]), &dist(&[0.5, 0.25, 0.25])).unwrap();
        assert_eq!(r.probs(), &[1.0, 0.0, 0.0]);
        assert!(matches!(
            residual_distribution(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])),
            Err(Error::DegenerateResidual)
        ));
    }

    #[test]
    fn implied_source_rows_are_constant() {
        let src: AcceptanceSource = serde_json::from_str(
            r#"{"kind":"implied","pairs":[{"draft":[0.5,0.5],"target":[0.2,0.8]},{"draft":[1.0],"target":[1.0]}]}"#,
        )
        .unwrap();
        src.validate().unwrap();
        let m = sample_acceptance_matrix(&src, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((m.row(0)[0] - 0.7).abs() < 1e-12 && m.row(0)[0] == m.row(0)[1]);
        assert_eq!(m.row(1), &[1.0, 1.0]);
        assert_eq!(m.row(2), m.row(0));

        let bad = AcceptanceSource::Implied {
            pairs: vec![DistributionPair { draft: dist(&[1.0]), target: dist(&[0.5, 0.5]) }],
        };
        assert!(bad.validate().is_err());
        assert!(AcceptanceSource::Implied { pairs: vec![] }.validate().is_err());
    }

    #[test]
    fn implied_acceptance() {
        let p = dist(&[0.1, 0.2, 0.7]);
        assert_eq!(implied_acceptance_prob(&p, &p), 1.0);
        assert_eq!(implied_acceptance_prob(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])), 0.0);
    }

    #[test]
    fn implied_acceptance_matches_monte_carlo() {
        // Independent route: count accepts of the rule itself.
        let ps = dist(&[0.5, 0.5]);
        let pm = dist(&[0.2, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 1_000_000;
        let mut accepted = 0u64;
        for _ in 0..trials {
            let d = ps.sample_with(rng.random());
            if verify_token(&ps, &pm, d, rng.random()).unwrap() == Verdict::Accepted {
                accepted += 1;
            }
        }
        let freq = accepted as f64 / trials as f64;
        assert!((freq - 0.7).abs() < 2e-3, "mc={freq}");
        assert!((implied_acceptance_prob(&ps, &pm) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn output_law_is_target() {
        let ps = dist(&[0.5, 0.3, 0.2, 0.0]);
        let pm = dist(&[0.1, 0.3, 0.4, 0.2]);
        let law = output_law(&ps, &pm).unwrap();
        assert!(total_variation(&law, pm.probs()) < 1e-12);
        let law = output_law(&pm, &pm).unwrap();
        assert_eq!(law, pm.probs());
    }

    #[test]
    fn sample_with_skips_zero_mass() {
        let d = dist(&[0.0, 1.0, 0.0]);
        assert_eq!(d.sample_with(0.0), 1);
        assert_eq!(d.sample_with(0.999_999), 1);
    }
}
