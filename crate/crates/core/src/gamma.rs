//! Initial allocation sequences `(γᵢ)` with `Σ γᵢ ≤ 1`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

/// Terms summed explicitly before switching to the Euler–Maclaurin tail.
const LOG_Q_HEAD_TERMS: usize = 10_000;

/// Serialized description of a γ-sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSpec {
    /// `γᵢ = 6/(π²i²)`
    QSeries,
    /// `γᵢ ∝ 1/((i+1)·ln(i+1)^s)`, normalized to sum to one.
    LogQ { s: f64 },
    /// `γᵢ = terms[i-1]`, zero beyond the list.
    Explicit { terms: Vec<f64> },
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::QSeries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSequence {
    kind: Kind,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    QSeries,
    LogQ { s: f64, normalizer: f64 },
    Explicit(Vec<f64>),
}

impl GammaSequence {
    pub fn q_series() -> Self {
        Self { kind: Kind::QSeries }
    }

    pub fn log_q(s: f64) -> Result<Self, ConfigError> {
        if !(s > 1.0) || !s.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "log-q exponent s must exceed 1 (series diverges), got {s}"
            )));
        }
        Ok(Self { kind: Kind::LogQ { s, normalizer: log_q_normalizer(s) } })
    }

    pub fn explicit(terms: Vec<f64>) -> Result<Self, ConfigError> {
        if let Some(bad) = terms.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return Err(ConfigError::Invalid(format!("gamma term {bad} is negative or not finite")));
        }
        let total: f64 = terms.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(ConfigError::Invalid(format!("gamma terms sum to {total} > 1")));
        }
        Ok(Self { kind: Kind::Explicit(terms) })
    }

    pub fn from_spec(spec: &GammaSpec) -> Result<Self, ConfigError> {
        match spec {
            GammaSpec::QSeries => Ok(Self::q_series()),
            GammaSpec::LogQ { s } => Self::log_q(*s),
            GammaSpec::Explicit { terms } => Self::explicit(terms.clone()),
        }
    }

    /// `γᵢ` for a 1-based index; index 0 yields 0.
    pub fn term(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        match &self.kind {
            Kind::QSeries => gamma_q_series(i),
            Kind::LogQ { s, normalizer } => normalizer * log_q_shape(i as f64, *s),
            Kind::Explicit(terms) => terms.get(i - 1).copied().unwrap_or(0.0),
        }
    }

    /// Table `[0, γ₁, …, γₙ]`, indexable by the 1-based step.
    pub fn table(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|i| self.term(i)).collect()
    }

    /// Normalizing constant of the log-q form, if this is one.
    pub fn normalizer(&self) -> Option<f64> {
        match self.kind {
            Kind::LogQ { normalizer, .. } => Some(normalizer),
            _ => None,
        }
    }
}

/// `6/(π²i²)`
pub fn gamma_q_series(i: usize) -> f64 {
    let i = i as f64;
    6.0 / (PI * PI * i * i)
}

/// Normalized log-q term `c·1/((i+1)·ln(i+1)^s)`.
pub fn gamma_log_q(i: usize, s: f64) -> Result<f64, ConfigError> {
    Ok(GammaSequence::log_q(s)?.term(i))
}

fn log_q_shape(x: f64, s: f64) -> f64 {
    let u = x + 1.0;
    1.0 / (u * u.ln().powf(s))
}

/// `1/Σᵢ 1/((i+1)ln(i+1)^s)`, cached per exponent.
///
/// The series converges too slowly to truncate, so the first
/// `LOG_Q_HEAD_TERMS - 1` terms are summed directly and the rest is replaced by
/// its Euler–Maclaurin expansion `∫_N^∞ f + f(N)/2 − f'(N)/12`. The closed
/// form `∫_N^∞ f = ln(N+1)^{1−s}/(s−1)` keeps the tail exact up to the
/// `f'''(N)/720 ≈ 1e-18` remainder.
pub fn log_q_normalizer(s: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&s.to_bits()) {
        return *c;
    }
    let n = LOG_Q_HEAD_TERMS;
    // Sum smallest terms first with compensation.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for i in (1..n).rev() {
        let y = log_q_shape(i as f64, s) - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let u = n as f64 + 1.0;
    let l = u.ln();
    let integral = l.powf(1.0 - s) / (s - 1.0);
    let f = log_q_shape(n as f64, s);
    let df = -(1.0 + s / l) / (u * u * l.powf(s));
    let total = sum + integral + f / 2.0 - df / 12.0;
    let c = 1.0 / total;
    cache.lock().unwrap().insert(s.to_bits(), c);
    c
}
