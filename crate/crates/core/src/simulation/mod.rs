//! Synthetic settings with known coefficients, the complete-case and
//! single-imputation SCAD baselines, and the replication harness.

pub mod baselines;
pub mod run;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{spans_from_sizes, DataSet};
use crate::error::{MbiError, Result};
use crate::seed::derive_seed;

pub use baselines::{cc_scad, scad_fixed, scad_path, scad_threshold, si_scad, single_imputation, ScadFit, ScadOptions};
pub use run::{replication_seed, run_replication, run_setting, summarize, write_summary_csv, Method, MetricRow, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariance {
    Exchangeable,
    /// Not supported; generation fails with `NotImplemented`.
    Unstructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Mcar,
    Mar,
    Informative,
}

/// Score `a_i` that makes a row less likely to land in the complete group.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingScore {
    Uniform,
    /// `scale · Σ_{j ∈ columns} X_ij`.
    Covariates { columns: Vec<usize>, scale: f64 },
    /// `scale · (Σ_{j ∈ columns} X_ij + y_i)`.
    CovariatesAndResponse { columns: Vec<usize>, scale: f64 },
    /// `scale · y_i`.
    Response { scale: f64 },
}

impl MissingScore {
    fn score(&self, x: &DMatrix<f64>, y: &DVector<f64>, i: usize) -> f64 {
        match self {
            MissingScore::Uniform => 0.0,
            MissingScore::Covariates { columns, scale } => scale * columns.iter().map(|&j| x[(i, j)]).sum::<f64>(),
            MissingScore::CovariatesAndResponse { columns, scale } => {
                scale * (columns.iter().map(|&j| x[(i, j)]).sum::<f64>() + y[i])
            }
            MissingScore::Response { scale } => scale * y[i],
        }
    }
}

/// A simulation design. Relevant covariates are the leading
/// `relevant[s]` columns of source `s`, each with coefficient `signals[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingSpec {
    pub id: usize,
    pub group_sizes: Vec<usize>,
    pub source_sizes: Vec<usize>,
    /// Observed sources of each group, in group order.
    pub layout: Vec<Vec<bool>>,
    pub signals: Vec<f64>,
    pub relevant: Vec<usize>,
    pub rho: f64,
    pub covariance: Covariance,
    pub mechanism: Mechanism,
    pub score: MissingScore,
    /// Sources whose covariates are replaced by their signs.
    pub binary_sources: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

/// Four-group layout over three sources: complete, then missing the
/// third, second and first source.
fn three_source_layout() -> Vec<Vec<bool>> {
    vec![
        vec![true, true, true],
        vec![true, true, false],
        vec![true, false, true],
        vec![false, true, true],
    ]
}

impl SettingSpec {
    /// The preset for settings 1 to 6 at their first listed correlation.
    pub fn preset(id: usize) -> Result<Self> {
        let base = |group_sizes: Vec<usize>, signals: Vec<f64>, relevant: Vec<usize>| SettingSpec {
            id,
            group_sizes,
            source_sizes: vec![20, 20, 20],
            layout: three_source_layout(),
            signals,
            relevant,
            rho: 0.4,
            covariance: Covariance::Exchangeable,
            mechanism: Mechanism::Mcar,
            score: MissingScore::Uniform,
            binary_sources: Vec::new(),
            reps: 50,
            seed: 0,
        };
        let spec = match id {
            1 | 6 => {
                let sizes = if id == 1 { vec![30, 220, 220, 230] } else { vec![200; 4] };
                let mut s = base(sizes, vec![5.0, 6.0, 7.0, 8.0], vec![4, 4, 4, 2]);
                s.source_sizes = vec![12, 12, 12, 4];
                s.layout = three_source_layout()
                    .into_iter()
                    .map(|mut sig| {
                        sig.push(true);
                        sig
                    })
                    .collect();
                s.mechanism = Mechanism::Mar;
                s.score = MissingScore::Covariates {
                    columns: (36..40).collect(),
                    scale: 10.0,
                };
                s
            }
            2 => {
                let mut s = base(vec![180, 120, 100, 100], vec![6.0, 5.0, 4.0], vec![6, 6, 8]);
                s.source_sizes = vec![75, 100, 825];
                s.rho = 0.5;
                s
            }
            3 => {
                let mut s = base(vec![45, 45, 80, 80], vec![2.5, 3.0, 3.5], vec![5, 5, 5]);
                s.mechanism = Mechanism::Informative;
                s.score = MissingScore::CovariatesAndResponse {
                    columns: (0..5).collect(),
                    scale: 3.0,
                };
                s
            }
            4 => {
                let mut s = base(vec![45, 265, 265, 125], vec![7.0, 8.0, 10.0], vec![2, 6, 7]);
                s.mechanism = Mechanism::Informative;
                s.score = MissingScore::Response { scale: 10.0 };
                s.binary_sources = vec![0];
                s
            }
            5 => {
                let mut s = base(vec![100, 100, 100], vec![0.8, 1.0, 1.5], vec![5, 5, 5]);
                s.layout = three_source_layout().split_off(1);
                s.rho = 0.5;
                s
            }
            _ => return Err(MbiError::InvalidArgument(format!("unknown setting {id}"))),
        };
        Ok(spec)
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn p(&self) -> usize {
        self.source_sizes.iter().sum()
    }

    pub fn q(&self) -> usize {
        self.relevant.iter().sum()
    }

    pub fn has_complete_group(&self) -> bool {
        self.layout.iter().any(|sig| sig.iter().all(|&o| o))
    }

    /// The true coefficient vector.
    pub fn beta(&self) -> DVector<f64> {
        let mut beta = DVector::zeros(self.p());
        for (s, span) in spans_from_sizes(&self.source_sizes).into_iter().enumerate() {
            for j in span.start..span.start + self.relevant[s] {
                beta[j] = self.signals[s];
            }
        }
        beta
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.source_sizes.len();
        let bad = |msg: String| Err(MbiError::InvalidArgument(msg));
        if self.signals.len() != s || self.relevant.len() != s {
            return bad("signals and relevant counts need one entry per source".into());
        }
        if self.relevant.iter().zip(&self.source_sizes).any(|(r, p)| r > p) {
            return bad("more relevant covariates than source columns".into());
        }
        if self.layout.len() != self.group_sizes.len() || self.layout.iter().any(|sig| sig.len() != s) {
            return bad("layout needs one signature of length S per group".into());
        }
        if self.binary_sources.iter().any(|&b| b >= s) {
            return bad("binary source out of range".into());
        }
        let p = self.p();
        if !(self.rho < 1.0 && self.rho > -1.0 / (p as f64 - 1.0).max(1.0)) {
            return Err(MbiError::InvalidRho { rho: self.rho, p });
        }
        if self.covariance == Covariance::Unstructured {
            return Err(MbiError::NotImplemented("unstructured covariance".into()));
        }
        Ok(())
    }
}

/// Exchangeable normal rows with unit variance and correlation `rho`:
/// `x = √(1−ρ)(e + s·(1ᵀe)·1)` with `(1 + s p)² = 1 + pρ/(1−ρ)`.
pub fn exchangeable_normal<R: Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let t = rho / (1.0 - rho);
    let inner = 1.0 + t * p as f64;
    if !(rho < 1.0) || !(inner > 0.0) {
        return Err(MbiError::InvalidRho { rho, p });
    }
    let s = (inner.sqrt() - 1.0) / p as f64;
    let scale = (1.0 - rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    let mut e = vec![0.0; p];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let common = s * e.iter().sum::<f64>();
        for j in 0..p {
            x[(i, j)] = scale * (e[j] + common);
        }
    }
    Ok(x)
}

/// A fully observed draw of the setting together with its true coefficients.
pub fn gen_data(spec: &SettingSpec, seed: u64) -> Result<(DataSet, DVector<f64>)> {
    spec.validate()?;
    let (n, p) = (spec.n(), spec.p());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let mut x = exchangeable_normal(n, p, spec.rho, &mut rng)?;
    let spans = spans_from_sizes(&spec.source_sizes);
    for &b in &spec.binary_sources {
        for j in spans[b].clone() {
            for i in 0..n {
                x[(i, j)] = if x[(i, j)] >= 0.0 { 1.0 } else { -1.0 };
            }
        }
    }
    let beta = spec.beta();
    let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = &x * &beta + noise;
    let data = DataSet::new(x, DMatrix::from_element(n, p, true), y, spans)?;
    Ok((data, beta))
}

/// Group label of every row. The complete group is filled first by weighted
/// sampling without replacement with weights `exp(−a_i)`; the remaining rows
/// are shuffled and cut into the other groups in order.
pub fn assign_groups(spec: &SettingSpec, data: &DataSet, seed: u64) -> Vec<usize> {
    let n = data.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let complete = spec.layout.iter().position(|sig| sig.iter().all(|&o| o));
    let mut labels = vec![usize::MAX; n];
    let mut rest: Vec<usize> = (0..n).collect();
    if let (Some(c), false) = (complete, spec.mechanism == Mechanism::Mcar) {
        // Gumbel-top-k: the n₁ largest −a_i + Gumbel keys are a weighted
        // sample without replacement.
        let mut keys: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (-spec.score.score(data.values(), data.response(), i) - (-u.ln()).ln(), i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in keys.iter().take(spec.group_sizes[c]) {
            labels[i] = c;
        }
        rest.retain(|&i| labels[i] == usize::MAX);
    }
    rest.shuffle(&mut rng);
    let mut pos = 0;
    for (g, &size) in spec.group_sizes.iter().enumerate() {
        if labels.contains(&g) {
            continue;
        }
        for &i in &rest[pos..pos + size] {
            labels[i] = g;
        }
        pos += size;
    }
    labels
}

/// Observation mask induced by the group labels and the layout.
pub fn assign_missing(spec: &SettingSpec, data: &DataSet, seed: u64) -> DMatrix<bool> {
    let labels = assign_groups(spec, data, seed);
    let spans = spans_from_sizes(&spec.source_sizes);
    DMatrix::from_fn(data.n_rows(), data.n_cols(), |i, j| {
        let s = spans.iter().position(|r| r.contains(&j)).expect("column in a source");
        spec.layout[labels[i]][s]
    })
}

/// One replication: complete draw, masked data, and true coefficients.
pub fn draw(spec: &SettingSpec, seed: u64) -> Result<(DataSet, DataSet, DVector<f64>)> {
    let (full, beta) = gen_data(spec, seed)?;
    let mask = assign_missing(spec, &full, seed);
    let data = full.with_mask(mask)?;
    Ok((full, data, beta))
}

/// `(FNR, FPR, MSE)` with MSE `‖β̂ − β⁰‖²/p`. A rate with an empty
/// denominator is 0.
pub fn metrics(beta_hat: &DVector<f64>, beta0: &DVector<f64>) -> (f64, f64, f64) {
    assert_eq!(beta_hat.len(), beta0.len());
    let mut missed = 0usize;
    let mut relevant = 0usize;
    let mut false_pos = 0usize;
    let mut nulls = 0usize;
    for (b, t) in beta_hat.iter().zip(beta0.iter()) {
        if *t != 0.0 {
            relevant += 1;
            missed += usize::from(*b == 0.0);
        } else {
            nulls += 1;
            false_pos += usize::from(*b != 0.0);
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mse = (beta_hat - beta0).norm_squared() / beta0.len().max(1) as f64;
    (rate(missed, relevant), rate(false_pos, nulls), mse)
}
