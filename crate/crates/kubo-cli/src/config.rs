//! Run configuration: JSON file plus command-line overrides.

use std::path::Path;

use kubo::confunc::ConductivityParams;
use kubo::geometry::{make_twisted_pair, BilayerGeometry, BravaisLattice, ConfigShift, Layer};
use kubo::hamiltonian::HamiltonianModel;
use kubo::quadrature::Method;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Hexagonal,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub lattice: LatticeKind,
    pub twist_degrees: f64,
    pub interlayer_gap: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { lattice: LatticeKind::Hexagonal, twist_degrees: 2.5, interlayer_gap: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub r_cut: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { r_cut: 3f64.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
    pub e_fermi: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self { beta: 1.0, eta: 0.5, omega: 0.0, e_fermi: 0.0 }
    }
}

/// `"auto"` or a fixed count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KPoles {
    Auto,
    Fixed(usize),
}

impl Serialize for KPoles {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KPoles::Auto => s.serialize_str("auto"),
            KPoles::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KPoles {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(k) => Ok(KPoles::Fixed(k)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for KPoles {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KPoles::Auto);
        }
        s.parse().map(KPoles::Fixed).map_err(|_| format!("k_poles must be 'auto' or a non-negative integer, got '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Cut-out half-width; the truncation set's recommendation when absent.
    pub r: Option<u32>,
    pub q: usize,
    pub method: Method,
    pub eps: f64,
    pub kmax: Option<usize>,
    pub k_poles: KPoles,
    pub group_size: usize,
    pub threads: Option<usize>,
    pub resolvent_tol: f64,
    /// Shift for single-configuration runs.
    pub b: [f64; 2],
    /// Focal layer (1 or 2) for single-configuration runs.
    pub layer: u8,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            r: None,
            q: 4,
            method: Method::Kpm,
            eps: 1e-3,
            kmax: None,
            k_poles: KPoles::Auto,
            group_size: 1,
            threads: None,
            resolvent_tol: 1e-8,
            b: [0.0, 0.0],
            layer: 1,
        }
    }
}

/// Parameter sweep for `bench`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub betas: Vec<f64>,
    pub etas: Vec<f64>,
    pub methods: Vec<Method>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub model: ModelConfig,
    pub params: ParamsConfig,
    pub run: RunSection,
    pub bench: BenchSection,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level checks, naming the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        if !g.twist_degrees.is_finite() {
            return Err(field_err("geometry.twist_degrees", "must be finite"));
        }
        if !(g.interlayer_gap >= 0.0) {
            return Err(field_err("geometry.interlayer_gap", "must be >= 0"));
        }
        if !(self.model.r_cut > 0.0) {
            return Err(field_err("model.r_cut", "must be > 0"));
        }
        let p = &self.params;
        if !(p.beta >= 0.0) || !p.beta.is_finite() {
            return Err(field_err("params.beta", "must be finite and >= 0"));
        }
        if !(p.eta > 0.0) || !p.eta.is_finite() {
            return Err(field_err("params.eta", "must be finite and > 0"));
        }
        if !p.omega.is_finite() {
            return Err(field_err("params.omega", "must be finite"));
        }
        if !p.e_fermi.is_finite() {
            return Err(field_err("params.e_fermi", "must be finite"));
        }
        let r = &self.run;
        if r.r == Some(0) {
            return Err(field_err("run.r", "must be >= 1"));
        }
        if r.q < 1 {
            return Err(field_err("run.q", "must be >= 1"));
        }
        if !(r.eps > 0.0) {
            return Err(field_err("run.eps", "must be > 0"));
        }
        if r.kmax == Some(0) {
            return Err(field_err("run.kmax", "must be >= 1"));
        }
        if r.group_size < 1 {
            return Err(field_err("run.group_size", "must be >= 1"));
        }
        if r.threads == Some(0) {
            return Err(field_err("run.threads", "must be >= 1"));
        }
        if !(r.resolvent_tol > 0.0) {
            return Err(field_err("run.resolvent_tol", "must be > 0"));
        }
        if !r.b.iter().all(|x| x.is_finite()) {
            return Err(field_err("run.b", "must be finite"));
        }
        if r.layer != 1 && r.layer != 2 {
            return Err(field_err("run.layer", "must be 1 or 2"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<BilayerGeometry, CliError> {
        let base = match self.geometry.lattice {
            LatticeKind::Hexagonal => BravaisLattice::hexagonal(),
            LatticeKind::Square => BravaisLattice::square(),
        };
        make_twisted_pair(base, self.geometry.twist_degrees, self.geometry.interlayer_gap)
            .map_err(|e| field_err("geometry", e))
    }

    pub fn model(&self) -> Result<HamiltonianModel, CliError> {
        HamiltonianModel::new(self.model.r_cut).map_err(|e| field_err("model.r_cut", e))
    }

    pub fn params(&self) -> Result<ConductivityParams, CliError> {
        let p = &self.params;
        ConductivityParams::new(p.beta, p.eta, p.omega, p.e_fermi).map_err(|e| field_err("params", e))
    }

    pub fn shift(&self) -> ConfigShift {
        let focal_layer = if self.run.layer == 2 { Layer::Second } else { Layer::First };
        ConfigShift { b: self.run.b, focal_layer }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(RunConfig::parse("{}").unwrap(), c);
    }

    #[test]
    fn k_poles_forms() {
        let c = RunConfig::parse(r#"{"run": {"k_poles": 3}}"#).unwrap();
        assert_eq!(c.run.k_poles, KPoles::Fixed(3));
        let c = RunConfig::parse(r#"{"run": {"k_poles": "auto", "method": "poles"}}"#).unwrap();
        assert_eq!(c.run.k_poles, KPoles::Auto);
        assert_eq!(c.run.method, Method::Poles);
        assert!(RunConfig::parse(r#"{"run": {"k_poles": "many"}}"#).is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let msg = |t: &str| match RunConfig::parse(t) {
            Err(CliError::Config(m)) => m,
            other => panic!("{other:?}"),
        };
        assert!(msg(r#"{"params": {"eta": -1}}"#).contains("params.eta"));
        assert!(msg(r#"{"run": {"q": 0}}"#).contains("run.q"));
        assert!(msg(r#"{"run": {"method": "magic"}}"#).contains("method"));
        assert!(msg(r#"{"params": {"temperature": 1}}"#).contains("temperature"));
        assert!(msg(r#"{"run": {"layer": 3}}"#).contains("run.layer"));
    }
}
