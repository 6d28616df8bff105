//! Exact information-theoretic bounds on deployment-time shortcut
//! identification.
//!
//! A chain `S* → D → θ → g` of discrete channels is marginalized exactly;
//! mutual information along the chain, Fano floors on the error of
//! estimating `S*` from `D` or `θ`, and the Bayes-optimal errors they bound
//! are reported. Logarithms are base 2 throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-9;
const ROW_TOL: f64 = 1e-12;

/// Largest alphabet accepted by [`ChainSpec::validate`].
pub const MAX_ALPHABET: usize = 16;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("{what}: entries must be finite and ≥ 0")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidConfig(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    check_distribution(dist, "distribution")?;
    Ok(-dist.iter().map(|&p| plogp(p)).sum::<f64>())
}

/// `I(X;Y)` in bits from a joint table `joint[x][y]`.
pub fn mutual_information(joint: &[Vec<f64>]) -> Result<f64> {
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    check_distribution(&flat, "joint")?;
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let ny = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|r| r.len() != ny) {
        return Err(Error::InvalidConfig("joint table is ragged".into()));
    }
    let py: Vec<f64> = (0..ny).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).log2();
            }
        }
    }
    // rounding can leave a tiny negative residue for independent tables
    Ok(mi.max(0.0))
}

/// Row-stochastic matrix `P(out | in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteChannel {
    rows: Vec<Vec<f64>>,
}

impl DiscreteChannel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_out = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || n_out == 0 {
            return Err(Error::InvalidConfig("channel needs at least one row and column".into()));
        }
        for r in &rows {
            if r.len() != n_out || r.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidConfig("channel rows must be equal-length and ≥ 0".into()));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidConfig(format!("channel row sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Every input maps to output 0.
    pub fn constant(n_in: usize, n_out: usize) -> Self {
        Self {
            rows: (0..n_in)
                .map(|_| (0..n_out).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Random rows; each row is a normalized vector of cubed uniforms, which
    /// gives a mix of peaked and diffuse rows.
    pub fn random(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let rows = (0..n_in)
            .map(|_| {
                let raw: Vec<f64> = (0..n_out).map(|_| rng.random::<f64>().powi(3) + 1e-12).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        Self { rows }
    }

    pub fn n_in(&self) -> usize {
        self.rows.len()
    }

    pub fn n_out(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `joint[s][out] = Σ_in joint[s][in] · P(out | in)`.
    fn push_joint(&self, joint: &[Vec<f64>]) -> Vec<Vec<f64>> {
        joint
            .iter()
            .map(|row| {
                let mut out = vec![0.0; self.n_out()];
                for (i, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (o, &q) in self.rows[i].iter().enumerate() {
                        out[o] += p * q;
                    }
                }
                out
            })
            .collect()
    }
}

/// Non-decreasing performance map applied to `1 − L`.
pub trait PerformanceMap: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

#[derive(Debug, Default)]
pub struct IdentityMap;

impl PerformanceMap for IdentityMap {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn apply(&self, x: f64) -> f64 {
        x
    }
    fn derivative(&self, _x: f64) -> f64 {
        1.0
    }
}

/// `x²` on `[0, 1]`, constant outside.
#[derive(Debug, Default)]
pub struct SquareMap;

impl PerformanceMap for SquareMap {
    fn name(&self) -> &'static str {
        "square"
    }
    fn apply(&self, x: f64) -> f64 {
        let c = x.clamp(0.0, 1.0);
        c * c
    }
    fn derivative(&self, x: f64) -> f64 {
        if (0.0..=1.0).contains(&x) {
            2.0 * x
        } else {
            0.0
        }
    }
}

pub struct PerformanceMapRegistry {
    entries: Vec<Box<dyn PerformanceMap>>,
}

impl Default for PerformanceMapRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PerformanceMapRegistry {
    pub fn builtin() -> Self {
        Self {
            entries: vec![Box::new(IdentityMap), Box::new(SquareMap)],
        }
    }

    pub fn register(&mut self, map: Box<dyn PerformanceMap>) {
        self.entries.retain(|m| m.name() != map.name());
        self.entries.push(map);
    }

    pub fn get(&self, name: &str) -> Option<&dyn PerformanceMap> {
        self.entries.iter().find(|m| m.name() == name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|m| m.name()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub prior: Vec<f64>,
    pub s_to_d: DiscreteChannel,
    pub d_to_theta: DiscreteChannel,
    pub theta_to_g: DiscreteChannel,
    /// Name of the performance map.
    pub rho: String,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prior.len() < 2 {
            return Err(Error::InvalidConfig("need |S| ≥ 2".into()));
        }
        check_distribution(&self.prior, "prior")?;
        let chans = [&self.s_to_d, &self.d_to_theta, &self.theta_to_g];
        let mut n = self.prior.len();
        for c in chans {
            if c.n_in() != n {
                return Err(Error::InvalidConfig("channel input size does not chain".into()));
            }
            n = c.n_out();
        }
        if std::iter::once(self.prior.len())
            .chain(chans.iter().map(|c| c.n_out()))
            .any(|k| k > MAX_ALPHABET)
        {
            return Err(Error::InvalidConfig(format!("alphabets are limited to {MAX_ALPHABET}")));
        }
        Ok(())
    }

    /// Random chain with every alphabet size in `2..=alphabet_max`.
    pub fn random(alphabet_max: usize, rho: &str, rng: &mut impl Rng) -> Self {
        let mut size = || rng.random_range(2..=alphabet_max.max(2));
        let (ns, nd, nt, ng) = (size(), size(), size(), size());
        let raw: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        Self {
            prior: raw.iter().map(|x| x / total).collect(),
            s_to_d: DiscreteChannel::random(ns, nd, rng),
            d_to_theta: DiscreteChannel::random(nd, nt, rng),
            theta_to_g: DiscreteChannel::random(nt, ng, rng),
            rho: rho.to_string(),
        }
    }

    fn joints(&self) -> [Vec<Vec<f64>>; 3] {
        let diag: Vec<Vec<f64>> = self
            .prior
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut r = vec![0.0; self.prior.len()];
                r[i] = p;
                r
            })
            .collect();
        let sd = self.s_to_d.push_joint(&diag);
        let st = self.d_to_theta.push_joint(&sd);
        let sg = self.theta_to_g.push_joint(&st);
        [sd, st, sg]
    }
}

/// Which observable the estimator of `S*` sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    Data,
    Theta,
}

/// Error of the MAP estimator of `S*` from the observable.
pub fn bayes_identification_error(spec: &ChainSpec, observable: Observable) -> Result<f64> {
    spec.validate()?;
    let [sd, st, _] = spec.joints();
    let joint = match observable {
        Observable::Data => sd,
        Observable::Theta => st,
    };
    let n_out = joint[0].len();
    let correct: f64 = (0..n_out)
        .map(|o| joint.iter().map(|r| r[o]).fold(0.0, f64::max))
        .sum();
    Ok((1.0 - correct).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub alphabet: usize,
    pub h_s: f64,
    pub i_s_d: f64,
    pub i_s_theta: f64,
    pub i_s_g: f64,
    pub delta_i: f64,
    /// Raw Fano floors; `None` when `|S| = 2`, where the denominator
    /// `log₂(|S| − 1)` vanishes.
    pub l_deploy_raw: Option<f64>,
    pub l_train_raw: Option<f64>,
    pub l_deploy: f64,
    pub l_train: f64,
    /// `ρ(1 − L)` performance ceilings, from the raw floors.
    pub ceiling_deploy: Option<f64>,
    pub ceiling_train: Option<f64>,
    pub bayes_error_train: f64,
    pub bayes_error_deploy: f64,
}

/// Fano floor `(H − I − 1)/log₂(K − 1)`; `None` for `K = 2`.
pub fn fano_floor(h: f64, i: f64, alphabet: usize) -> Option<f64> {
    let denom = ((alphabet - 1) as f64).log2();
    (denom > 0.0).then(|| (h - i - 1.0) / denom)
}

pub fn analyze_chain(spec: &ChainSpec, maps: &PerformanceMapRegistry) -> Result<BoundsReport> {
    spec.validate()?;
    let rho = maps
        .get(&spec.rho)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown performance map {:?}", spec.rho)))?;
    let k = spec.prior.len();
    let [sd, st, sg] = spec.joints();
    let h_s = entropy(&spec.prior)?;
    let i_s_d = mutual_information(&sd)?;
    let i_s_theta = mutual_information(&st)?;
    let i_s_g = mutual_information(&sg)?;
    let l_deploy_raw = fano_floor(h_s, i_s_theta, k);
    let l_train_raw = fano_floor(h_s, i_s_d, k);
    Ok(BoundsReport {
        alphabet: k,
        h_s,
        i_s_d,
        i_s_theta,
        i_s_g,
        delta_i: i_s_d - i_s_theta,
        l_deploy: l_deploy_raw.unwrap_or(0.0).max(0.0),
        l_train: l_train_raw.unwrap_or(0.0).max(0.0),
        ceiling_deploy: l_deploy_raw.map(|l| rho.apply(1.0 - l)),
        ceiling_train: l_train_raw.map(|l| rho.apply(1.0 - l)),
        l_deploy_raw,
        l_train_raw,
        bayes_error_train: bayes_identification_error(spec, Observable::Data)?,
        bayes_error_deploy: bayes_identification_error(spec, Observable::Theta)?,
    })
}

/// Checks the mean-value form of the ceiling gap: the difference quotient
/// of `ρ` over `[1 − L_deploy, 1 − L_train]` lies within the range of `ρ′`
/// on that interval (sampled densely, endpoints included).
pub fn mean_value_gap_holds(rho: &dyn PerformanceMap, l_deploy: f64, l_train: f64, tol: f64) -> bool {
    let (lo, hi) = (1.0 - l_deploy, 1.0 - l_train);
    let gap = rho.apply(hi) - rho.apply(lo);
    if hi - lo <= f64::EPSILON * 4.0 {
        return gap.abs() <= tol;
    }
    let quotient = gap / (hi - lo);
    const STEPS: usize = 2000;
    let mut dmin = f64::INFINITY;
    let mut dmax = f64::NEG_INFINITY;
    for s in 0..=STEPS {
        let d = rho.derivative(lo + (hi - lo) * s as f64 / STEPS as f64);
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    quotient >= dmin - tol && quotient <= dmax + tol
}

/// One row of the `theory-sim` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chain: usize,
    pub alphabet: usize,
    pub h_s: f64,
    pub i_s_d: f64,
    pub i_s_theta: f64,
    pub i_s_g: f64,
    pub delta_i: f64,
    pub l_train: f64,
    pub l_deploy: f64,
    pub bayes_error_train: f64,
    pub bayes_error_deploy: f64,
    pub dpi_ok: bool,
    pub ordering_ok: bool,
    pub fano_ok: bool,
    /// `None` when the gap identity is undefined (`|S| = 2`).
    pub gap_ok: Option<bool>,
}

pub const DPI_TOL: f64 = 1e-10;
pub const GAP_TOL: f64 = 1e-12;

/// Evaluates the bounds on one chain and checks every inequality.
pub fn check_chain(chain: usize, spec: &ChainSpec, maps: &PerformanceMapRegistry) -> Result<SweepRow> {
    let r = analyze_chain(spec, maps)?;
    let rho = maps.get(&spec.rho).expect("validated by analyze_chain");
    let dpi_ok = r.i_s_g <= r.i_s_theta + DPI_TOL && r.i_s_theta <= r.i_s_d + DPI_TOL;
    let ordering_ok = match (r.l_deploy_raw, r.l_train_raw) {
        (Some(d), Some(t)) => d >= t,
        _ => r.l_deploy >= r.l_train,
    };
    let fano_ok = r.bayes_error_deploy >= r.l_deploy && r.bayes_error_train >= r.l_train;
    let gap_ok = match (r.l_deploy_raw, r.l_train_raw) {
        (Some(d), Some(t)) => Some(if rho.name() == "identity" {
            let gap = r.ceiling_train.unwrap_or(0.0) - r.ceiling_deploy.unwrap_or(0.0);
            let expected = r.delta_i / ((r.alphabet - 1) as f64).log2();
            (gap - expected).abs() <= GAP_TOL
        } else {
            mean_value_gap_holds(rho, d, t, GAP_TOL)
        }),
        _ => None,
    };
    Ok(SweepRow {
        chain,
        alphabet: r.alphabet,
        h_s: r.h_s,
        i_s_d: r.i_s_d,
        i_s_theta: r.i_s_theta,
        i_s_g: r.i_s_g,
        delta_i: r.delta_i,
        l_train: r.l_train,
        l_deploy: r.l_deploy,
        bayes_error_train: r.bayes_error_train,
        bayes_error_deploy: r.bayes_error_deploy,
        dpi_ok,
        ordering_ok,
        fano_ok,
        gap_ok,
    })
}

/// Checks `n_chains` random chains drawn from `seed`.
pub fn sweep(n_chains: usize, alphabet_max: usize, rho: &str, seed: u64) -> Result<Vec<SweepRow>> {
    let maps = PerformanceMapRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_chains)
        .map(|c| {
            let spec = ChainSpec::random(alphabet_max, rho, &mut rng);
            check_chain(c, &spec, &maps)
        })
        .collect()
}
