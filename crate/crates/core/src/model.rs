//! SDE models `dX = V0(X) dt + sqrt(2) sum_k V_k(X) o dB^k` (Stratonovich) or
//! the equivalent Ito form with drift `U0`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::{jacobian_into, ConvertedDrift, SmoothField, VectorField};
use crate::error::{DomainError, Error, Result};
use crate::jet::Jet4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Ito,
    Stratonovich,
}

/// On-disk model definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub dim: usize,
    pub noise: usize,
    pub convention: Convention,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct SdeModel {
    label: String,
    convention: Convention,
    drift: VectorField,
    diffusions: Vec<VectorField>,
    additive: bool,
}

impl SdeModel {
    pub fn new(label: impl Into<String>, convention: Convention, drift: VectorField, diffusions: Vec<VectorField>) -> Result<Self> {
        let n = drift.dim();
        if n == 0 {
            return Err(Error::Dimension("model dimension must be positive".into()));
        }
        if let Some(k) = diffusions.iter().position(|v| v.dim() != n) {
            return Err(Error::Dimension(format!("diffusion {} has dimension {}, drift has {n}", k + 1, diffusions[k].dim())));
        }
        let additive = diffusions.iter().all(VectorField::is_constant);
        Ok(SdeModel { label: label.into(), convention, drift, diffusions, additive })
    }

    /// Build from expression strings; `diffusion[k]` lists the components of `V_{k+1}`.
    pub fn parse<S: AsRef<str>>(label: &str, convention: Convention, drift: &[S], diffusion: &[Vec<S>]) -> Result<Self> {
        let n = drift.len();
        let d = VectorField::parse(drift, n)?;
        let vs = diffusion.iter().map(|v| VectorField::parse(v, n)).collect::<Result<Vec<_>>>()?;
        SdeModel::new(label, convention, d, vs)
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.drift.len() != file.dim {
            return Err(Error::ModelFile(format!("`drift` has {} entries but dim is {}", file.drift.len(), file.dim)));
        }
        if file.diffusion.len() != file.noise {
            return Err(Error::ModelFile(format!("`diffusion` has {} fields but noise is {}", file.diffusion.len(), file.noise)));
        }
        for (k, v) in file.diffusion.iter().enumerate() {
            if v.len() != file.dim {
                return Err(Error::ModelFile(format!("`diffusion[{k}]` has {} entries but dim is {}", v.len(), file.dim)));
            }
        }
        let label = file.label.clone().unwrap_or_else(|| "custom".into());
        SdeModel::parse(&label, file.convention, &file.drift, &file.diffusion)
    }

    /// Parse a model JSON document; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::ModelFile(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        SdeModel::from_file(&file)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            label: Some(self.label.clone()),
            dim: self.dim(),
            noise: self.noise_dim(),
            convention: self.convention,
            drift: self.drift.sources(),
            diffusion: self.diffusions.iter().map(VectorField::sources).collect(),
        }
    }

    /// SHA-256 of the canonical JSON form (label excluded).
    pub fn hash(&self) -> String {
        let mut f = self.to_file();
        f.label = None;
        let bytes = serde_json::to_vec(&f).expect("model file serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusions.len()
    }

    /// Drift exactly as given, in the model's own convention.
    pub fn given_drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn diffusions(&self) -> &[VectorField] {
        &self.diffusions
    }

    pub fn is_additive(&self) -> bool {
        self.additive
    }

    /// `U0` as a differentiable field.
    pub fn ito_field(&self) -> ConvertedDrift<'_> {
        let sign = match self.convention {
            Convention::Ito => 0.0,
            Convention::Stratonovich => 1.0,
        };
        ConvertedDrift { base: &self.drift, diffusions: &self.diffusions, sign }
    }

    /// `V0` as a differentiable field.
    pub fn stratonovich_field(&self) -> ConvertedDrift<'_> {
        let sign = match self.convention {
            Convention::Ito => -1.0,
            Convention::Stratonovich => 0.0,
        };
        ConvertedDrift { base: &self.drift, diffusions: &self.diffusions, sign }
    }

    pub fn ito_drift(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut out = vec![0.0; self.dim()];
        self.ito_field().eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn stratonovich_drift(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut out = vec![0.0; self.dim()];
        self.stratonovich_field().eval_into(x, &mut out)?;
        Ok(out)
    }

    /// The same dynamics written in the other convention.
    pub fn with_convention(&self, convention: Convention) -> Result<Self> {
        if convention == self.convention {
            return Ok(self.clone());
        }
        if !self.additive {
            return Err(Error::Unsupported("converting a multiplicative-noise model needs symbolic derivatives".into()));
        }
        SdeModel::new(self.label.clone(), convention, self.drift.clone(), self.diffusions.clone())
    }
}

/// What the Euler engine needs from a model, in plain `f64`.
///
/// The drift here is always the Ito drift `U0`.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn is_additive(&self) -> bool;
    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<(), DomainError>;
    fn diffusion(&self, k: usize, x: &[f64], out: &mut [f64]) -> Result<(), DomainError>;
    /// Row-major Jacobian of the Ito drift.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<(), DomainError>;
    fn diffusion_jacobian(&self, k: usize, x: &[f64], out: &mut [f64]) -> Result<(), DomainError>;
    /// `[b, b', b'', b''', b'''']` for a one-dimensional model.
    fn drift_derivatives_1d(&self, x: f64) -> Result<[f64; 5], DomainError>;
}

impl Dynamics for SdeModel {
    fn dim(&self) -> usize {
        SdeModel::dim(self)
    }

    fn noise_dim(&self) -> usize {
        SdeModel::noise_dim(self)
    }

    fn is_additive(&self) -> bool {
        self.additive
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        self.ito_field().eval_into(x, out)
    }

    fn diffusion(&self, k: usize, x: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        self.diffusions[k].eval_into(x, out)
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        jacobian_into(&self.ito_field(), x, out)
    }

    fn diffusion_jacobian(&self, k: usize, x: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        jacobian_into(&self.diffusions[k], x, out)
    }

    fn drift_derivatives_1d(&self, x: f64) -> Result<[f64; 5], DomainError> {
        let mut out = [Jet4::constant(0.0)];
        self.ito_field().eval_into(&[Jet4::variable(x)], &mut out)?;
        Ok(out[0].derivatives())
    }
}
