//! Fully discrete twin of the sampling model, small enough to enumerate.
//!
//! The latent score W and its noisy observations are binned onto a shared
//! set of cut points, turning every conditional into an explicit table.
//! [`DiscreteScm::exact_query`] then answers P(Y | A, evidence) two ways:
//! by Bayes conditioning on the untouched joint, or by intervention on A
//! (drop A's prior, fix its value, keep every other mechanism). The two
//! routes share no code path, so their agreement is a meaningful check of
//! the graph's claim that conditioning and intervening on A coincide here.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::learner::sigmoid;

use super::{
    block_to_sample, build_schema, draw_categorical, sample_blocks, xw_name, xz_name, ProxyRole,
    ScmError, ScmSample, ScmSpec, A_COLUMN,
};

/// Exact inference refuses joint state spaces beyond this many cells.
pub const MAX_STATES: u128 = 10_000_000;

/// No single variable may carry more than this many levels.
pub const MAX_LEVELS: usize = 16;

/// Observed values for one query: one level index per XZ and XW column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub xz: Vec<usize>,
    pub xw: Vec<usize>,
}

/// Whether a query conditions on A seen in the data or forces A by
/// intervention. The two coincide for this graph because A has no parents,
/// but they are computed independently so that equality is evidence, not
/// tautology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Conditional,
    Intervention,
}

/// All mechanisms of the graph as explicit conditional probability tables.
///
/// Indexing follows the causal ordering: `z_given_a[a][z]`,
/// `w_given_az[a][z][w]`, `xz_given_z[i][z][level]`, `xw_given_w[j][w][level]`,
/// `p_given_a[a][p]`, `y_given_w[w]` = P(Y=1 | W bin w).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    pub a_prior: f64,
    pub z_given_a: Vec<Vec<f64>>,
    pub w_given_az: Vec<Vec<Vec<f64>>>,
    /// Strictly increasing bin edges for W and every XW; bin k is
    /// (cuts[k-1], cuts[k]], with open outer bins.
    pub cuts: Vec<f64>,
    /// Representative numeric value emitted for each W/XW bin.
    pub w_rep: Vec<f64>,
    pub xw_given_w: Vec<Vec<Vec<f64>>>,
    pub xz_given_z: Vec<Vec<Vec<f64>>>,
    pub p_given_a: Vec<Vec<f64>>,
    pub y_given_w: Vec<f64>,
    pub p_role: ProxyRole,
}

impl DiscreteScm {
    /// Discretizes a continuous spec. W is cut at the `w_bins`-quantiles of
    /// its noise-free distribution (the mixture of beta_z[z] + beta_a * a
    /// values weighted by P(a, z)); duplicate cut points collapse, so the
    /// realized bin count can be lower. XW observations share the same cuts
    /// so that a noise-free observation lands in its own W bin.
    pub fn from_spec(spec: &ScmSpec, w_bins: usize) -> Result<DiscreteScm, ScmError> {
        spec.validate()?;
        if w_bins == 0 {
            return Err(ScmError::InvalidSpec("w_bins must be at least 1".into()));
        }
        if w_bins > MAX_LEVELS {
            return Err(ScmError::NotDiscrete(format!(
                "w_bins {w_bins} exceeds {MAX_LEVELS}"
            )));
        }
        let m = spec.n_z_levels();
        if m > MAX_LEVELS {
            return Err(ScmError::NotDiscrete(format!(
                "{m} demographic levels exceed {MAX_LEVELS}"
            )));
        }
        let n_p = spec.n_p_levels();
        if n_p > MAX_LEVELS {
            return Err(ScmError::NotDiscrete(format!(
                "{n_p} proxy levels exceed {MAX_LEVELS}"
            )));
        }

        // Noise-free W support: one atom per (a, z) cell.
        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(2 * m);
        for a in 0..2usize {
            let pa = if a == 1 {
                spec.a_prior
            } else {
                1.0 - spec.a_prior
            };
            for z in 0..m {
                let v = spec.w_coeffs.beta_z[z] + spec.w_coeffs.beta_a * a as f64;
                atoms.push((v, pa * spec.z_given_a[a][z]));
            }
        }
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mixture_mean: f64 = atoms.iter().map(|(v, p)| v * p).sum();

        let mut cuts = Vec::new();
        for k in 1..w_bins {
            let t = k as f64 / w_bins as f64;
            let mut cum = 0.0;
            for &(v, p) in &atoms {
                cum += p;
                if cum >= t - 1e-12 {
                    if cuts.last() != Some(&v) {
                        cuts.push(v);
                    }
                    break;
                }
            }
        }
        let b = cuts.len() + 1;

        let sigma_w = spec.w_coeffs.sigma_w;
        let w_rep = representatives(&cuts, sigma_w, mixture_mean);

        let mut w_given_az = vec![vec![Vec::new(); m]; 2];
        for (a, rows) in w_given_az.iter_mut().enumerate() {
            for (z, masses) in rows.iter_mut().enumerate() {
                let mu = spec.w_coeffs.beta_z[z] + spec.w_coeffs.beta_a * a as f64;
                *masses = gaussian_bin_masses(&cuts, mu, sigma_w);
            }
        }

        let mut xw_given_w = Vec::with_capacity(spec.xw_noise.len());
        for &noise in &spec.xw_noise {
            let table: Vec<Vec<f64>> = w_rep
                .iter()
                .map(|&rep| gaussian_bin_masses(&cuts, rep, noise))
                .collect();
            xw_given_w.push(table);
        }

        let y_given_w = w_rep
            .iter()
            .map(|&rep| sigmoid(spec.y_link.gamma0 - spec.y_link.gamma1 * rep))
            .collect();

        let scm = DiscreteScm {
            a_prior: spec.a_prior,
            z_given_a: spec.z_given_a.clone(),
            w_given_az,
            cuts,
            w_rep,
            xw_given_w,
            xz_given_z: spec.xz_confusion.clone(),
            p_given_a: spec.p_given_a.clone(),
            y_given_w,
            p_role: spec.p_role,
        };
        debug_assert_eq!(scm.n_w_levels(), b);
        let states = scm.state_count();
        if states > MAX_STATES {
            return Err(ScmError::StateSpaceTooLarge {
                states,
                max: MAX_STATES,
            });
        }
        Ok(scm)
    }

    pub fn n_z_levels(&self) -> usize {
        self.z_given_a[0].len()
    }

    pub fn n_w_levels(&self) -> usize {
        self.w_rep.len()
    }

    pub fn n_p_levels(&self) -> usize {
        self.p_given_a[0].len()
    }

    pub fn k_z(&self) -> usize {
        self.xz_given_z.len()
    }

    pub fn k_w(&self) -> usize {
        self.xw_given_w.len()
    }

    /// Number of cells in the full joint (A, Z, W, P, XZ.., XW.., Y),
    /// saturating on overflow.
    pub fn state_count(&self) -> u128 {
        let mut states: u128 = 2 * 2;
        let mut mul = |k: usize, times: usize| {
            for _ in 0..times {
                states = states.saturating_mul(k as u128);
            }
        };
        mul(self.n_z_levels(), 1 + self.k_z());
        mul(self.n_w_levels(), 1 + self.k_w());
        mul(self.n_p_levels(), 1);
        states
    }

    /// Same visible column layout as the continuous sampler.
    pub fn schema(&self) -> crate::dataset::Schema {
        build_schema(
            self.n_z_levels(),
            self.k_z(),
            self.k_w(),
            self.n_p_levels(),
            self.p_role,
        )
    }

    /// Bin index a numeric XW value falls into under this model's cuts.
    pub fn xw_level_of_value(&self, v: f64) -> usize {
        self.cuts.partition_point(|c| *c < v)
    }

    /// Reads one sampled row back into query evidence.
    pub fn evidence_for_row(
        &self,
        data: &Dataset,
        row: usize,
    ) -> Result<(usize, Evidence), ScmError> {
        let col = |name: &str| {
            data.schema()
                .column_index(name)
                .ok_or_else(|| ScmError::BadEvidence(format!("missing column {name}")))
        };
        let a = data
            .categorical(col(A_COLUMN)?)
            .ok_or(ScmError::NoHiddenColumns)?[row] as usize;
        let mut xz = Vec::with_capacity(self.k_z());
        for i in 0..self.k_z() {
            let levels = data.categorical(col(&xz_name(i))?).ok_or_else(|| {
                ScmError::BadEvidence(format!("{} is not categorical", xz_name(i)))
            })?;
            xz.push(levels[row] as usize);
        }
        let mut xw = Vec::with_capacity(self.k_w());
        for j in 0..self.k_w() {
            let values = data
                .numeric(col(&xw_name(j))?)
                .ok_or_else(|| ScmError::BadEvidence(format!("{} is not numeric", xw_name(j))))?;
            xw.push(self.xw_level_of_value(values[row]));
        }
        Ok((a, Evidence { xz, xw }))
    }

    fn validate_query(&self, a: usize, y: usize, evidence: &Evidence) -> Result<(), ScmError> {
        if a > 1 || y > 1 {
            return Err(ScmError::BadEvidence(format!(
                "a={a}, y={y} must be 0 or 1"
            )));
        }
        if evidence.xz.len() != self.k_z() || evidence.xw.len() != self.k_w() {
            return Err(ScmError::BadEvidence(format!(
                "expected {} xz and {} xw observations, got {} and {}",
                self.k_z(),
                self.k_w(),
                evidence.xz.len(),
                evidence.xw.len()
            )));
        }
        if let Some(&e) = evidence.xz.iter().find(|&&e| e >= self.n_z_levels()) {
            return Err(ScmError::BadEvidence(format!("xz level {e} out of range")));
        }
        if let Some(&e) = evidence.xw.iter().find(|&&e| e >= self.n_w_levels()) {
            return Err(ScmError::BadEvidence(format!("xw level {e} out of range")));
        }
        Ok(())
    }

    /// P(Y = y | A = a, evidence), exactly.
    ///
    /// Conditional mode applies Bayes' rule to the intact joint, including
    /// A's prior; it fails with [`ScmError::ZeroMassEvidence`] when the
    /// conditioning event has probability zero. Intervention mode severs A
    /// from its prior and pushes the forced value through the remaining
    /// mechanisms, so it stays defined even where the conditional does not.
    pub fn exact_query(
        &self,
        a: usize,
        y: usize,
        evidence: &Evidence,
        mode: QueryMode,
    ) -> Result<f64, ScmError> {
        self.validate_query(a, y, evidence)?;
        let states = self.state_count();
        if states > MAX_STATES {
            return Err(ScmError::StateSpaceTooLarge {
                states,
                max: MAX_STATES,
            });
        }
        let m = self.n_z_levels();
        let b = self.n_w_levels();
        let (mut num, mut den) = (0.0, 0.0);
        match mode {
            QueryMode::Conditional => {
                let pa = if a == 1 {
                    self.a_prior
                } else {
                    1.0 - self.a_prior
                };
                for z in 0..m {
                    for w in 0..b {
                        let mut lik = pa * self.z_given_a[a][z] * self.w_given_az[a][z][w];
                        for (i, &e) in evidence.xz.iter().enumerate() {
                            lik *= self.xz_given_z[i][z][e];
                        }
                        for (j, &e) in evidence.xw.iter().enumerate() {
                            lik *= self.xw_given_w[j][w][e];
                        }
                        // P and Y are marginalized implicitly: both sum to 1.
                        den += lik;
                        let p1 = self.y_given_w[w];
                        num += lik * if y == 1 { p1 } else { 1.0 - p1 };
                    }
                }
            }
            QueryMode::Intervention => {
                // Truncated factorization: every factor except A's prior.
                for z in 0..m {
                    for w in 0..b {
                        for p in 0..self.n_p_levels() {
                            let mut mech = self.z_given_a[a][z]
                                * self.w_given_az[a][z][w]
                                * self.p_given_a[a][p];
                            for (i, &e) in evidence.xz.iter().enumerate() {
                                mech *= self.xz_given_z[i][z][e];
                            }
                            for (j, &e) in evidence.xw.iter().enumerate() {
                                mech *= self.xw_given_w[j][w][e];
                            }
                            for y_s in 0..2usize {
                                let term = mech
                                    * if y_s == 1 {
                                        self.y_given_w[w]
                                    } else {
                                        1.0 - self.y_given_w[w]
                                    };
                                den += term;
                                if y_s == y {
                                    num += term;
                                }
                            }
                        }
                    }
                }
            }
        }
        if den == 0.0 {
            return Err(ScmError::ZeroMassEvidence);
        }
        Ok(num / den)
    }

    /// Ancestral sampling over the tables. XW columns carry the numeric
    /// representative of the drawn bin so the dataset has the same shape as
    /// continuous samples. Deterministic per seed at any thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ScmSample, ScmError> {
        let block = sample_blocks(self.k_z(), self.k_w(), n, seed, |rng, out| {
            let a = usize::from(rng.random::<f64>() < self.a_prior);
            let z = draw_categorical(rng, &self.z_given_a[a]) as usize;
            let w = draw_categorical(rng, &self.w_given_az[a][z]) as usize;
            let p = draw_categorical(rng, &self.p_given_a[a]);
            for (i, xz) in out.xz.iter_mut().enumerate() {
                xz.push(draw_categorical(rng, &self.xz_given_z[i][z]));
            }
            for (j, xw) in out.xw.iter_mut().enumerate() {
                let level = draw_categorical(rng, &self.xw_given_w[j][w]) as usize;
                xw.push(self.w_rep[level]);
            }
            let y = f64::from(rng.random::<f64>() < self.y_given_w[w]);
            out.a.push(a as u32);
            out.z.push(z as u32);
            out.w.push(self.w_rep[w]);
            out.p.push(p);
            out.y.push(y);
        });
        block_to_sample(self.schema(), block)
    }
}

/// Mass a Normal(mu, sigma) puts in each bin of `cuts`; sigma = 0 is a
/// point mass in the bin containing mu. Rows are renormalized to sum to 1.
fn gaussian_bin_masses(cuts: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let b = cuts.len() + 1;
    let mut masses = vec![0.0; b];
    if sigma == 0.0 {
        masses[cuts.partition_point(|c| *c < mu)] = 1.0;
        return masses;
    }
    let normal = Normal::new(mu, sigma).expect("positive sigma");
    let mut prev = 0.0;
    for (k, &c) in cuts.iter().enumerate() {
        let cdf = normal.cdf(c);
        masses[k] = (cdf - prev).max(0.0);
        prev = cdf;
    }
    masses[b - 1] = (1.0 - prev).max(0.0);
    let total: f64 = masses.iter().sum();
    for mass in &mut masses {
        *mass /= total;
    }
    masses
}

/// One numeric value per bin: midpoints inside, outer bins pushed half a
/// step beyond the edge so reps stay strictly inside their own bin.
fn representatives(cuts: &[f64], sigma_w: f64, mixture_mean: f64) -> Vec<f64> {
    if cuts.is_empty() {
        return vec![mixture_mean];
    }
    let step = if cuts.len() >= 2 {
        (cuts[cuts.len() - 1] - cuts[0]) / (cuts.len() - 1) as f64
    } else {
        2.0 * sigma_w.max(0.5)
    };
    let mut reps = Vec::with_capacity(cuts.len() + 1);
    reps.push(cuts[0] - step / 2.0);
    for k in 1..cuts.len() {
        reps.push(cuts[k - 1] + (cuts[k] - cuts[k - 1]) / 2.0);
    }
    reps.push(cuts[cuts.len() - 1] + step / 2.0);
    reps
}

/// Reference answer from the fully materialized joint table. Shares no
/// arithmetic with [`DiscreteScm::exact_query`] beyond the tables
/// themselves: every state of every variable is enumerated and filtered.
pub fn brute_force_query(
    scm: &DiscreteScm,
    a: usize,
    y: usize,
    evidence: &Evidence,
    mode: QueryMode,
) -> Result<f64, ScmError> {
    scm.validate_query(a, y, evidence)?;
    let states = scm.state_count();
    if states > MAX_STATES {
        return Err(ScmError::StateSpaceTooLarge {
            states,
            max: MAX_STATES,
        });
    }
    let m = scm.n_z_levels();
    let b = scm.n_w_levels();
    let (k_z, k_w) = (scm.k_z(), scm.k_w());
    let mut radix = vec![2, m, b, scm.n_p_levels()];
    radix.extend(std::iter::repeat_n(m, k_z));
    radix.extend(std::iter::repeat_n(b, k_w));
    radix.push(2);

    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = vec![0usize; radix.len()];
    for mut t in 0..states as usize {
        for (d, &r) in radix.iter().enumerate().rev() {
            idx[d] = t % r;
            t /= r;
        }
        let (a_s, z, w, p) = (idx[0], idx[1], idx[2], idx[3]);
        let xz = &idx[4..4 + k_z];
        let xw = &idx[4 + k_z..4 + k_z + k_w];
        let y_s = idx[4 + k_z + k_w];

        if a_s != a || xz != evidence.xz || xw != evidence.xw {
            continue;
        }
        let pa = match mode {
            QueryMode::Conditional => {
                if a_s == 1 {
                    scm.a_prior
                } else {
                    1.0 - scm.a_prior
                }
            }
            // Under do(A=a) the prior is replaced by the forced assignment.
            QueryMode::Intervention => 1.0,
        };
        let mut prob =
            pa * scm.z_given_a[a_s][z] * scm.w_given_az[a_s][z][w] * scm.p_given_a[a_s][p];
        for (i, &e) in xz.iter().enumerate() {
            prob *= scm.xz_given_z[i][z][e];
        }
        for (j, &e) in xw.iter().enumerate() {
            prob *= scm.xw_given_w[j][w][e];
        }
        prob *= if y_s == 1 {
            scm.y_given_w[w]
        } else {
            1.0 - scm.y_given_w[w]
        };
        den += prob;
        if y_s == y {
            num += prob;
        }
    }
    if den == 0.0 {
        return Err(ScmError::ZeroMassEvidence);
    }
    Ok(num / den)
}
