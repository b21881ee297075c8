//! Parameter set of the mixture and its JSON persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emissions::ZigParams;
use crate::error::{invalid, Error, Result};
use crate::markov::{StationaryLaw, TransitionMatrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// θ: class proportions, per-class initial laws and transition matrices,
/// and one emission law per state shared by every class.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureHmmParams {
    pub delta: Vec<f64>,
    pub pis: Vec<StationaryLaw>,
    pub trans: Vec<TransitionMatrix>,
    pub emissions: Vec<ZigParams>,
}

impl MixtureHmmParams {
    pub fn new(
        delta: Vec<f64>,
        pis: Vec<StationaryLaw>,
        trans: Vec<TransitionMatrix>,
        emissions: Vec<ZigParams>,
    ) -> Result<Self> {
        let p = Self { delta, pis, trans, emissions };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn m(&self) -> usize {
        self.emissions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.k(), self.m());
        if k == 0 || m == 0 {
            return Err(invalid("need at least one component and one state"));
        }
        if self.delta.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(invalid("class proportions must lie in (0, 1]"));
        }
        let s: f64 = self.delta.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("class proportions sum to {s}, not 1")));
        }
        if self.pis.len() != k || self.trans.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{k} proportions but {} initial laws and {} transition matrices",
                self.pis.len(),
                self.trans.len()
            )));
        }
        if self.pis.iter().any(|p| p.len() != m) || self.trans.iter().any(|a| a.size() != m) {
            return Err(Error::DimensionMismatch(format!("every chain must have {m} states")));
        }
        for e in &self.emissions {
            e.validate()?;
        }
        Ok(())
    }

    /// Relabels classes: new class `i` is old class `perm[i]`.
    pub fn permute_components(&self, perm: &[usize]) -> Self {
        Self {
            delta: perm.iter().map(|&i| self.delta[i]).collect(),
            pis: perm.iter().map(|&i| self.pis[i].clone()).collect(),
            trans: perm.iter().map(|&i| self.trans[i].clone()).collect(),
            emissions: self.emissions.clone(),
        }
    }

    /// Relabels states in every class: new state `i` is old state `perm[i]`.
    pub fn permute_states(&self, perm: &[usize]) -> Self {
        Self {
            delta: self.delta.clone(),
            pis: self.pis.iter().map(|p| p.permuted(perm)).collect(),
            trans: self.trans.iter().map(|a| a.permuted(perm)).collect(),
            emissions: perm.iter().map(|&i| self.emissions[i]).collect(),
        }
    }

    /// Canonical labeling: states by increasing emission mean, then classes
    /// by decreasing `A_k[1,1]`. Ties keep the original order.
    ///
    /// Returns the relabeled parameters with the class and state permutations
    /// applied (new label `i` is old label `perm[i]`).
    pub fn canonicalize(&self) -> (Self, Vec<usize>, Vec<usize>) {
        let mut state_perm: Vec<usize> = (0..self.m()).collect();
        state_perm.sort_by(|&i, &j| self.emissions[i].mean().total_cmp(&self.emissions[j].mean()).then(i.cmp(&j)));
        let relabeled = self.permute_states(&state_perm);
        let mut comp_perm: Vec<usize> = (0..self.k()).collect();
        comp_perm.sort_by(|&i, &j| {
            relabeled.trans[j].get(0, 0).total_cmp(&relabeled.trans[i].get(0, 0)).then(i.cmp(&j))
        });
        (relabeled.permute_components(&comp_perm), comp_perm, state_perm)
    }

    /// Marginal state weights `Σ_k δ_k π_kh`.
    pub fn marginal_state_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.m()];
        for (d, pi) in self.delta.iter().zip(&self.pis) {
            for (wh, p) in w.iter_mut().zip(pi.probs()) {
                *wh += d * p;
            }
        }
        w
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_FORMAT_VERSION,
            k: self.k(),
            m: self.m(),
            delta: self.delta.clone(),
            pi: self.pis.iter().map(|p| p.probs().to_vec()).collect(),
            a: self.trans.iter().map(TransitionMatrix::to_rows).collect(),
            emissions: self.emissions.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(invalid(format!("unsupported model format version {}", doc.version)));
        }
        let params = Self::new(
            doc.delta,
            doc.pi.into_iter().map(StationaryLaw::new).collect::<Result<_>>()?,
            doc.a.into_iter().map(TransitionMatrix::new).collect::<Result<_>>()?,
            doc.emissions,
        )?;
        if params.k() != doc.k || params.m() != doc.m {
            return Err(Error::DimensionMismatch(format!(
                "document declares K={}, M={} but arrays have K={}, M={}",
                doc.k,
                doc.m,
                params.k(),
                params.m()
            )));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk model layout. Floats are written in shortest round-trip form, so
/// loading a saved model reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub delta: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    pub emissions: Vec<ZigParams>,
}
