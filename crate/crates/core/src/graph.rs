//! Redistribution weights `g_{j,i}` and `h_{j,i}` for graph procedures.

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::gamma::GammaSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum WeightsSpec {
    /// `g_{j,i} = h_{j,i} = γ_{i−j}`
    #[default]
    LaggedGamma,
    /// Row `j-1` lists the weights from `j` to `j+1, j+2, …`; missing
    /// entries are zero. `h` defaults to `g`.
    Explicit {
        g: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightTable {
    Lagged,
    Explicit(Vec<Vec<f64>>),
}

impl WeightTable {
    fn explicit(rows: Vec<Vec<f64>>, name: &str) -> Result<Self, ConfigError> {
        for (j, row) in rows.iter().enumerate() {
            if let Some(w) = row.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "{name}-weight {w} out of node {} is negative or not finite",
                    j + 1
                )));
            }
            let total: f64 = row.iter().sum();
            if total > 1.0 + 1e-12 {
                return Err(ConfigError::Invalid(format!(
                    "{name}-weights out of node {} sum to {total} > 1",
                    j + 1
                )));
            }
        }
        Ok(WeightTable::Explicit(rows))
    }

    /// Weight from node `j` to node `i > j` (both 1-based).
    pub fn weight(&self, gamma: &GammaSequence, j: usize, i: usize) -> f64 {
        debug_assert!(i > j && j >= 1);
        match self {
            WeightTable::Lagged => gamma.term(i - j),
            WeightTable::Explicit(rows) => {
                rows.get(j - 1).and_then(|r| r.get(i - j - 1)).copied().unwrap_or(0.0)
            }
        }
    }
}

/// The pair of weight tables used by graph procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphWeights {
    pub g: WeightTable,
    pub h: WeightTable,
}

impl GraphWeights {
    pub fn lagged_gamma() -> Self {
        Self { g: WeightTable::Lagged, h: WeightTable::Lagged }
    }

    pub fn from_spec(spec: &WeightsSpec) -> Result<Self, ConfigError> {
        match spec {
            WeightsSpec::LaggedGamma => Ok(Self::lagged_gamma()),
            WeightsSpec::Explicit { g, h } => {
                let g_table = WeightTable::explicit(g.clone(), "g")?;
                let h_table = match h {
                    Some(h) => WeightTable::explicit(h.clone(), "h")?,
                    None => g_table.clone(),
                };
                Ok(Self { g: g_table, h: h_table })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagged_weights_follow_gamma() {
        let gamma = GammaSequence::q_series();
        let w = GraphWeights::lagged_gamma();
        assert_eq!(w.g.weight(&gamma, 3, 5), gamma.term(2));
        assert_eq!(w.h.weight(&gamma, 1, 2), gamma.term(1));
    }

    #[test]
    fn explicit_rows() {
        let spec = WeightsSpec::Explicit { g: vec![vec![0.5, 0.5], vec![1.0]], h: None };
        let w = GraphWeights::from_spec(&spec).unwrap();
        let gamma = GammaSequence::q_series();
        assert_eq!(w.g.weight(&gamma, 1, 3), 0.5);
        assert_eq!(w.g.weight(&gamma, 1, 4), 0.0);
        assert_eq!(w.h.weight(&gamma, 2, 3), 1.0);
        assert_eq!(w.g.weight(&gamma, 7, 8), 0.0);
    }

    #[test]
    fn rejects_overweight_rows() {
        let spec = WeightsSpec::Explicit { g: vec![vec![0.7, 0.4]], h: None };
        assert!(GraphWeights::from_spec(&spec).is_err());
        let spec = WeightsSpec::Explicit { g: vec![vec![0.5]], h: Some(vec![vec![-0.1]]) };
        assert!(GraphWeights::from_spec(&spec).is_err());
    }
}
