//! Synthetic two-cause competing-risks data drawn from a known Fine-Gray
//! model.
//!
//! Cause 1 has subdistribution CIF `F_1(t|x) = 1 - (1 - F_01(t))^{exp(η_1)}`
//! with `F_01(t) = π(1 - e^{-t})`. The remaining mass `(1 - π)^{exp(η_1)}`
//! goes to cause 2, whose conditional time is exponential with rate
//! `exp(η_2)`. Censoring is independent `Uniform(0, c)` with `c` tuned to
//! the requested censoring rate.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    Zero,
    Linear {
        beta: f64,
    },
    /// `a(x² - 1)`, mean zero under a standard normal covariate.
    Quadratic {
        a: f64,
    },
    Sine {
        a: f64,
    },
}

impl Effect {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Effect::Zero => 0.0,
            Effect::Linear { beta } => beta * x,
            Effect::Quadratic { a } => a * (x * x - 1.0),
            Effect::Sine { a } => a * x.sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    /// `effects[k][i]`: contribution of feature `i` to `η_{k+1}`.
    pub effects: [Vec<Effect>; 2],
    /// Plateau of the baseline cause-1 CIF.
    pub pi: f64,
    pub censoring_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 4000,
            p: 3,
            effects: [
                vec![
                    Effect::Linear { beta: 1.0 },
                    Effect::Linear { beta: -1.0 },
                    Effect::Zero,
                ],
                vec![Effect::Quadratic { a: 0.5 }, Effect::Zero, Effect::Zero],
            ],
            pi: 0.6,
            censoring_rate: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Config("n and p must be positive".into()));
        }
        for (k, eff) in self.effects.iter().enumerate() {
            if eff.len() != self.p {
                return Err(Error::Config(format!(
                    "cause {} lists {} effects for p = {}",
                    k + 1,
                    eff.len(),
                    self.p
                )));
            }
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config(format!(
                "pi must lie in (0, 1), got {}",
                self.pi
            )));
        }
        if !self.censoring_rate.is_finite() {
            return Err(Error::Config("censoring_rate must be finite".into()));
        }
        Ok(())
    }

    /// Sets every effect of cause 1 to `Linear` with the given coefficients
    /// and clears cause 2.
    pub fn linear(n: usize, beta: &[f64], seed: u64) -> Self {
        SynthSpec {
            n,
            p: beta.len(),
            effects: [
                beta.iter().map(|&b| Effect::Linear { beta: b }).collect(),
                vec![Effect::Zero; beta.len()],
            ],
            seed,
            ..SynthSpec::default()
        }
    }

    pub fn eta(&self, cause: u32, x: &[f64]) -> f64 {
        self.effects[cause as usize - 1]
            .iter()
            .zip(x)
            .map(|(e, &v)| e.eval(v))
            .sum()
    }

    pub fn contribution(&self, feature: usize, cause: u32, x: f64) -> f64 {
        self.effects[cause as usize - 1][feature].eval(x)
    }
}

/// The generating model, for evaluating true incidences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueModel {
    pub pi: f64,
}

impl TrueModel {
    pub fn baseline_cif1(&self, t: f64) -> f64 {
        self.pi * -(-t).exp_m1()
    }

    pub fn cif1(&self, t: f64, eta1: f64) -> f64 {
        1.0 - (1.0 - self.baseline_cif1(t)).powf(eta1.exp())
    }

    /// Probability of eventually failing from cause 2.
    pub fn cause2_mass(&self, eta1: f64) -> f64 {
        (1.0 - self.pi).powf(eta1.exp())
    }

    pub fn cif2(&self, t: f64, eta1: f64, eta2: f64) -> f64 {
        self.cause2_mass(eta1) * -(-(eta2.exp() * t)).exp_m1()
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: SurvivalDataset,
    /// `n × 2` true linear predictors.
    pub true_eta: Array2<f64>,
    pub truth: TrueModel,
    /// Upper bound of the uniform censoring distribution (infinite when
    /// there is no censoring).
    pub censoring_bound: f64,
    pub achieved_censoring: f64,
}

impl SynthData {
    pub fn true_cif(&self, subject: usize, cause: u32, t: f64) -> f64 {
        let e1 = self.true_eta[[subject, 0]];
        match cause {
            1 => self.truth.cif1(t, e1),
            _ => self.truth.cif2(t, e1, self.true_eta[[subject, 1]]),
        }
    }

    /// `x1..xp,time,event`.
    pub fn write_dataset_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = &self.dataset;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = d.feature_names.clone();
        header.push("time".into());
        header.push("event".into());
        w.write_record(&header)?;
        for i in 0..d.n() {
            let mut row: Vec<String> = d.x.row(i).iter().map(|v| format!("{v}")).collect();
            row.push(format!("{}", d.time[i]));
            row.push(d.event[i].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<synth>", e))?;
        Ok(())
    }

    /// `subject,true_eta1,true_eta2`.
    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subject", "true_eta1", "true_eta2"])?;
        for (i, row) in self.true_eta.rows().into_iter().enumerate() {
            w.write_record([i.to_string(), format!("{}", row[0]), format!("{}", row[1])])?;
        }
        w.flush().map_err(|e| Error::io("<synth>", e))?;
        Ok(())
    }
}

/// Expected censored fraction given latent event times when `C ~ U(0, c)`.
fn expected_censoring(latent: &[f64], c: f64) -> f64 {
    latent.iter().map(|&t| (t / c).min(1.0)).sum::<f64>() / latent.len() as f64
}

/// Smallest-error bound `c` for the target rate, by bisection on the
/// expected censoring fraction (decreasing in `c`).
fn calibrate_bound(latent: &[f64], target: f64) -> f64 {
    let mut lo = 1e-12;
    let mut hi = latent.iter().copied().fold(1.0, f64::max);
    while expected_censoring(latent, hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_censoring(latent, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = TrueModel { pi: spec.pi };
    let (n, p) = (spec.n, spec.p);
    let mut x = Array2::zeros((n, p));
    for v in x.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut true_eta = Array2::zeros((n, 2));
    let mut latent = Vec::with_capacity(n);
    let mut cause = Vec::with_capacity(n);
    let unit_exp = Exp::new(1.0).expect("rate 1 is valid");
    for i in 0..n {
        let row: Vec<f64> = x.row(i).to_vec();
        let e1 = spec.eta(1, &row);
        let e2 = spec.eta(2, &row);
        true_eta[[i, 0]] = e1;
        true_eta[[i, 1]] = e2;
        let u: f64 = rng.random();
        let mass1 = 1.0 - truth.cause2_mass(e1);
        if u < mass1 {
            // invert F_1(t|x) = u
            let base = -((-e1).exp() * (-u).ln_1p()).exp_m1();
            let t = -(-base / spec.pi).ln_1p();
            latent.push(t);
            cause.push(1u32);
        } else {
            let t: f64 = unit_exp.sample(&mut rng) / e2.exp();
            latent.push(t);
            cause.push(2u32);
        }
    }

    let mut target = spec.censoring_rate;
    if !(0.0..1.0).contains(&target) {
        let clamped = target.clamp(0.0, 0.99);
        log::warn!("censoring rate {target} is unattainable; using {clamped}");
        target = clamped;
    }
    let bound = if target == 0.0 {
        f64::INFINITY
    } else {
        calibrate_bound(&latent, target)
    };
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    let mut censored = 0usize;
    for i in 0..n {
        let c = if bound.is_finite() {
            rng.random::<f64>() * bound
        } else {
            f64::INFINITY
        };
        if c < latent[i] {
            time.push(c);
            event.push(0);
            censored += 1;
        } else {
            time.push(latent[i]);
            event.push(cause[i]);
        }
    }
    let achieved = censored as f64 / n as f64;
    if target > 0.0 {
        let se = (target * (1.0 - target) / n as f64).sqrt();
        if (achieved - target).abs() > 3.0 * se {
            log::warn!("censoring target {target} not met: achieved {achieved:.4}");
        }
    }
    let names = (1..=p).map(|i| format!("x{i}")).collect();
    let dataset = SurvivalDataset::new(x, time, event, 2, names)?;
    Ok(SynthData {
        dataset,
        true_eta,
        truth,
        censoring_bound: bound,
        achieved_censoring: achieved,
    })
}
