//! Synthetic multi-modality scenarios.
//!
//! SNR throughout is the ratio of the empirical variance of the realized
//! signal entries to that of the realized noise entries. Noise is rescaled so
//! the ratio holds exactly for each draw.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MvoprError, Result};
use crate::numerics::{sample_mvn, standard_normal_matrix, CovarianceKind, CovarianceSpec, DenseMatrix, RngStream, Vector};
use crate::projection::ModalityChain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "s1")]
    S1,
    #[serde(rename = "s2")]
    S2,
    #[serde(rename = "s3")]
    S3,
    #[serde(rename = "s4_ar1")]
    S4Ar1,
    #[serde(rename = "s4_cs")]
    S4Cs,
    #[serde(rename = "s5_null")]
    S5Null,
    #[serde(rename = "s6_chain")]
    S6Chain,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4Ar1,
        ScenarioId::S4Cs,
        ScenarioId::S5Null,
        ScenarioId::S6Chain,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::S1 => "s1",
            ScenarioId::S2 => "s2",
            ScenarioId::S3 => "s3",
            ScenarioId::S4Ar1 => "s4_ar1",
            ScenarioId::S4Cs => "s4_cs",
            ScenarioId::S5Null => "s5_null",
            ScenarioId::S6Chain => "s6_chain",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = MvoprError;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| MvoprError::invalid(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignRule {
    Positive,
    Random,
}

mod cov_str {
    use super::CovarianceKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &CovarianceKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&k.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CovarianceKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One directed link `M_target += M_source B`; modality numbers start at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub target: usize,
    pub source: usize,
    pub rank: usize,
    pub zero_row_frac: f64,
}

/// Flat key-value scenario description. Link arrays are parallel and use
/// 1-based modality numbers; `snr_links` has one entry per distinct link
/// target in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub n: usize,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub link_targets: Vec<usize>,
    #[serde(default)]
    pub link_sources: Vec<usize>,
    #[serde(default)]
    pub link_ranks: Vec<usize>,
    #[serde(default)]
    pub zero_row_fracs: Vec<f64>,
    #[serde(default)]
    pub snr_links: Vec<f64>,
    pub support_sizes: Vec<usize>,
    pub coef_lo: f64,
    pub coef_hi: f64,
    pub sign_rule: SignRule,
    pub snr_eps1: f64,
    /// Covariance of modalities without incoming links.
    #[serde(with = "cov_str")]
    pub base_cov: CovarianceKind,
    /// Covariance of the noise added to linked modalities.
    #[serde(with = "cov_str")]
    pub noise_cov: CovarianceKind,
    pub reps: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Built-in parameterizations.
    pub fn builtin(id: ScenarioId) -> Self {
        let two = |n, dims: Vec<usize>, rank, frac, snr, supp: usize, sign, eps1, noise| ScenarioConfig {
            scenario: id,
            n,
            dims,
            link_targets: vec![2],
            link_sources: vec![1],
            link_ranks: vec![rank],
            zero_row_fracs: vec![frac],
            snr_links: vec![snr],
            support_sizes: vec![supp, supp],
            coef_lo: 1.0,
            coef_hi: 2.0,
            sign_rule: sign,
            snr_eps1: eps1,
            base_cov: CovarianceKind::Identity,
            noise_cov: noise,
            reps: 100,
            seed: 20240501,
        };
        use SignRule::*;
        match id {
            ScenarioId::S1 => two(200, vec![300, 300], 1, 0.95, 10.0, 10, Positive, 100.0, CovarianceKind::Identity),
            ScenarioId::S2 => two(200, vec![50, 300], 9, 0.7, 30.0, 10, Positive, 100.0, CovarianceKind::Identity),
            ScenarioId::S3 => two(200, vec![50, 50], 3, 0.5, 20.0, 25, Positive, 100.0, CovarianceKind::Identity),
            ScenarioId::S4Ar1 => two(200, vec![100, 100], 1, 0.5, 5.0, 10, Random, 3.0, CovarianceKind::Ar1 { rho: 0.9 }),
            ScenarioId::S4Cs => {
                two(200, vec![100, 100], 1, 0.5, 5.0, 10, Random, 3.0, CovarianceKind::CompoundSymmetry { mu: 0.7 })
            }
            ScenarioId::S5Null => ScenarioConfig {
                link_targets: vec![],
                link_sources: vec![],
                link_ranks: vec![],
                zero_row_fracs: vec![],
                snr_links: vec![],
                ..two(200, vec![100, 100], 0, 0.0, 1.0, 10, Random, 3.0, CovarianceKind::Identity)
            },
            ScenarioId::S6Chain => ScenarioConfig {
                scenario: id,
                n: 100,
                dims: vec![100, 100, 100],
                link_targets: vec![2, 3, 3],
                link_sources: vec![1, 1, 2],
                link_ranks: vec![3, 1, 1],
                zero_row_fracs: vec![0.0, 0.0, 0.0],
                snr_links: vec![10.0, 20.0],
                support_sizes: vec![10, 10, 10],
                coef_lo: 1.0,
                coef_hi: 2.0,
                sign_rule: Positive,
                snr_eps1: 100.0,
                base_cov: CovarianceKind::Identity,
                noise_cov: CovarianceKind::Identity,
                reps: 100,
                seed: 20240501,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| MvoprError::invalid(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn links(&self) -> Vec<LinkSpec> {
        (0..self.link_targets.len())
            .map(|i| LinkSpec {
                target: self.link_targets[i].wrapping_sub(1),
                source: self.link_sources[i].wrapping_sub(1),
                rank: self.link_ranks[i],
                zero_row_frac: self.zero_row_fracs[i],
            })
            .collect()
    }

    /// Distinct link targets (0-based), ascending; aligned with `snr_links`.
    pub fn link_target_set(&self) -> Vec<usize> {
        self.links().iter().map(|l| l.target).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn snr_for_target(&self, target: usize) -> Option<f64> {
        self.link_target_set().iter().position(|&t| t == target).map(|i| self.snr_links[i])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dims.len();
        let bad = |m: String| Err(MvoprError::invalid(m));
        if k == 0 || self.dims.contains(&0) {
            return bad("dims must be nonempty and positive".into());
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        let m = self.link_targets.len();
        if self.link_sources.len() != m || self.link_ranks.len() != m || self.zero_row_fracs.len() != m {
            return bad("link_targets, link_sources, link_ranks and zero_row_fracs must have equal length".into());
        }
        let mut seen = BTreeSet::new();
        for (i, l) in self.links().iter().enumerate() {
            if l.target >= k || l.source >= k {
                return bad(format!("link {} refers to a modality outside 1..={k}", i + 1));
            }
            if l.source >= l.target {
                return bad(format!("link {} must point downstream (source < target)", i + 1));
            }
            if !seen.insert((l.target, l.source)) {
                return bad(format!("duplicate link {} <- {}", l.target + 1, l.source + 1));
            }
            if !(0.0..=1.0).contains(&l.zero_row_frac) {
                return bad(format!("zero_row_frac {} outside [0, 1]", l.zero_row_frac));
            }
            let rows = nonzero_rows(self.dims[l.source], l.zero_row_frac);
            if l.rank > rows.min(self.dims[l.target]) {
                return bad(format!(
                    "link {} rank {} exceeds min(nonzero rows {rows}, target dim {})",
                    i + 1,
                    l.rank,
                    self.dims[l.target]
                ));
            }
        }
        if self.snr_links.len() != self.link_target_set().len() {
            return bad(format!(
                "snr_links needs one value per linked modality ({}), got {}",
                self.link_target_set().len(),
                self.snr_links.len()
            ));
        }
        if self.snr_links.iter().chain([&self.snr_eps1]).any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("SNR values must be finite and positive".into());
        }
        if self.support_sizes.len() != k {
            return bad("support_sizes needs one entry per modality".into());
        }
        if let Some(j) = (0..k).find(|&j| self.support_sizes[j] > self.dims[j]) {
            return bad(format!("support size {} exceeds dimension {} of modality {}", self.support_sizes[j], self.dims[j], j + 1));
        }
        if !(self.coef_lo > 0.0 && self.coef_lo < self.coef_hi && self.coef_hi.is_finite()) {
            return bad("coefficient law needs 0 < coef_lo < coef_hi".into());
        }
        self.base_cov.validate()?;
        self.noise_cov.validate()?;
        Ok(())
    }
}

fn nonzero_rows(p: usize, zero_row_frac: f64) -> usize {
    // tolerate representation error such as 1 - 0.95 = 0.05000000000000004
    let x = (1.0 - zero_row_frac) * p as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(p)
}

/// `B = L R^T` with `L` zero outside a uniformly chosen set of
/// `ceil((1 - frac) p)` rows.
pub fn generate_sparse_lowrank_b<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    rank: usize,
    zero_row_frac: f64,
    rng: &mut R,
) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&zero_row_frac) {
        return Err(MvoprError::invalid(format!("zero_row_frac {zero_row_frac} outside [0, 1]")));
    }
    let rows = nonzero_rows(p, zero_row_frac);
    if rows == 0 || rank > rows.min(q) {
        return Err(MvoprError::invalid(format!(
            "rank {rank} infeasible with {rows} nonzero rows and {q} columns"
        )));
    }
    let mut chosen: Vec<usize> = sample_indices(rng, p, rows).into_vec();
    chosen.sort_unstable();
    let l_rows = standard_normal_matrix(rows, rank, rng);
    let r = standard_normal_matrix(q, rank, rng);
    let mut l = DenseMatrix::zeros(p, rank);
    for (i, &row) in chosen.iter().enumerate() {
        l.row_mut(row).copy_from(&l_rows.row(i));
    }
    Ok(l * r.transpose())
}

/// Sparse coefficient vector with a uniformly drawn support (sorted) and
/// magnitudes from `U(lo, hi)`.
pub fn generate_coefficients<R: Rng + ?Sized>(
    dim: usize,
    support_size: usize,
    lo: f64,
    hi: f64,
    sign_rule: SignRule,
    rng: &mut R,
) -> Result<(Vector, Vec<usize>)> {
    if support_size > dim {
        return Err(MvoprError::invalid(format!("support {support_size} exceeds dimension {dim}")));
    }
    if !(lo > 0.0 && lo < hi) {
        return Err(MvoprError::invalid("coefficient law needs 0 < lo < hi"));
    }
    let mut support: Vec<usize> = sample_indices(rng, dim, support_size).into_vec();
    support.sort_unstable();
    let mut beta = Vector::zeros(dim);
    for &j in &support {
        let mag = rng.random_range(lo..hi);
        let sign = match sign_rule {
            SignRule::Positive => 1.0,
            SignRule::Random => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        beta[j] = sign * mag;
    }
    Ok((beta, support))
}

/// Population variance of all entries.
pub fn entry_variance(m: &DenseMatrix) -> f64 {
    let len = m.len() as f64;
    if len == 0.0 {
        return 0.0;
    }
    let mean = m.sum() / len;
    m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len
}

/// Returns `(c * base_noise, c)` with `var(signal) / var(c * base_noise) = target_snr`.
pub fn scale_to_snr(signal: &DenseMatrix, target_snr: f64, base_noise: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
    if !(target_snr > 0.0) {
        return Err(MvoprError::invalid(format!("target SNR must be positive, got {target_snr}")));
    }
    if signal.shape() != base_noise.shape() {
        return Err(MvoprError::shape(format!(
            "signal {:?} vs noise {:?}",
            signal.shape(),
            base_noise.shape()
        )));
    }
    let vs = entry_variance(signal);
    let vn = entry_variance(base_noise);
    if !(vs > 0.0) {
        return Err(MvoprError::DegenerateSignal("signal has zero variance".into()));
    }
    if !(vn > 0.0) {
        return Err(MvoprError::DegenerateSignal("base noise has zero variance".into()));
    }
    let c = (vs / (target_snr * vn)).sqrt();
    Ok((base_noise * c, c))
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub scenario: ScenarioId,
    pub rep: u64,
    pub seed: u64,
    pub chain: ModalityChain,
    pub y: Vector,
    pub betas: Vec<Vector>,
    /// Support of each modality's coefficients, local column indices.
    pub true_supports: Vec<Vec<usize>>,
    /// One matrix per configured link, in config order.
    pub true_b: Vec<DenseMatrix>,
    /// Scaled noise of each linked modality; `None` for modalities without links.
    pub link_noise: Vec<Option<DenseMatrix>>,
    pub noise_scales: Vec<Option<f64>>,
    pub eps1: Vector,
    pub eps1_scale: f64,
}

impl SimulatedDataset {
    /// Support in concatenated-column coordinates.
    pub fn global_support(&self) -> Vec<usize> {
        let offsets = self.chain.offsets();
        self.true_supports
            .iter()
            .enumerate()
            .flat_map(|(j, s)| s.iter().map(|i| i + offsets[j]).collect::<Vec<_>>())
            .collect()
    }
}

const TAG_BASE: u64 = 100;
const TAG_NOISE: u64 = 200;
const TAG_LINK: u64 = 300;
const TAG_COEF: u64 = 400;
const TAG_EPS1: u64 = 500;

/// Dataset for replication `rep`; a pure function of `(config, rep)`.
pub fn simulate_scenario(config: &ScenarioConfig, rep: u64) -> Result<SimulatedDataset> {
    config.validate()?;
    let stream = RngStream::new(config.seed, rep);
    let k = config.dims.len();
    let n = config.n;
    let links = config.links();

    let mut true_b = Vec::with_capacity(links.len());
    for (i, l) in links.iter().enumerate() {
        let mut rng = stream.child(TAG_LINK + i as u64).rng();
        true_b.push(generate_sparse_lowrank_b(
            config.dims[l.source],
            config.dims[l.target],
            l.rank,
            l.zero_row_frac,
            &mut rng,
        )?);
    }

    let mut modalities: Vec<DenseMatrix> = Vec::with_capacity(k);
    let mut link_noise = Vec::with_capacity(k);
    let mut noise_scales = Vec::with_capacity(k);
    for j in 0..k {
        let incoming: Vec<usize> = (0..links.len()).filter(|&i| links[i].target == j).collect();
        if incoming.is_empty() {
            let spec = CovarianceSpec::new(config.base_cov, config.dims[j]);
            modalities.push(sample_mvn(n, &spec, stream.child(TAG_BASE + j as u64))?);
            link_noise.push(None);
            noise_scales.push(None);
            continue;
        }
        let mut signal = DenseMatrix::zeros(n, config.dims[j]);
        for &i in &incoming {
            signal += &modalities[links[i].source] * &true_b[i];
        }
        let spec = CovarianceSpec::new(config.noise_cov, config.dims[j]);
        let base = sample_mvn(n, &spec, stream.child(TAG_NOISE + j as u64))?;
        let snr = config.snr_for_target(j).expect("validated");
        let (noise, c) = scale_to_snr(&signal, snr, &base)?;
        modalities.push(signal + &noise);
        link_noise.push(Some(noise));
        noise_scales.push(Some(c));
    }

    let mut betas = Vec::with_capacity(k);
    let mut supports = Vec::with_capacity(k);
    let mut y_signal = Vector::zeros(n);
    for j in 0..k {
        let mut rng = stream.child(TAG_COEF + j as u64).rng();
        let (beta, support) = generate_coefficients(
            config.dims[j],
            config.support_sizes[j],
            config.coef_lo,
            config.coef_hi,
            config.sign_rule,
            &mut rng,
        )?;
        y_signal += &modalities[j] * &beta;
        betas.push(beta);
        supports.push(support);
    }
    let mut rng = stream.child(TAG_EPS1).rng();
    let base = standard_normal_matrix(n, 1, &mut rng);
    let signal_mat = DenseMatrix::from_column_slice(n, 1, y_signal.as_slice());
    let (eps, eps1_scale) = scale_to_snr(&signal_mat, config.snr_eps1, &base)?;
    let eps1 = Vector::from_column_slice(eps.as_slice());
    let y = &y_signal + &eps1;

    let names = (1..=k).map(|j| format!("m{j}")).collect();
    Ok(SimulatedDataset {
        scenario: config.scenario,
        rep,
        seed: config.seed,
        chain: ModalityChain::new(modalities, names)?,
        y,
        betas,
        true_supports: supports,
        true_b,
        link_noise,
        noise_scales,
        eps1,
        eps1_scale,
    })
}
