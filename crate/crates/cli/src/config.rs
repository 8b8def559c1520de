//! Experiment configuration: one file, TOML or JSON, every section optional.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub seed: u64,
    pub identities: IdentitiesConfig,
    pub quotients: QuotientsConfig,
    pub commutator: CommutatorConfig,
    pub flow: FlowConfig,
    pub transport: TransportConfig,
    pub counterexample: CounterexampleConfig,
    pub deformation: DeformationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n: 1,
            seed: 0,
            identities: IdentitiesConfig::default(),
            quotients: QuotientsConfig::default(),
            commutator: CommutatorConfig::default(),
            flow: FlowConfig::default(),
            transport: TransportConfig::default(),
            counterexample: CounterexampleConfig::default(),
            deformation: DeformationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitiesConfig {
    pub samples: usize,
    pub radius: f64,
    pub tolerance: f64,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self { samples: 10_000, radius: 2.0, tolerance: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuotientsConfig {
    /// "bump", "t" or "x2".
    pub f: String,
    pub bump_radius: f64,
    /// "first", "second", "vertical1" or "vertical2".
    pub order: String,
    pub w: Vec<f64>,
    pub ladder: Vec<f64>,
    pub s: f64,
    pub a: [f64; 2],
    pub omega: [f64; 2],
    pub cells: usize,
}

impl Default for QuotientsConfig {
    fn default() -> Self {
        Self {
            f: "bump".into(),
            bump_radius: 3.0,
            order: "first".into(),
            w: vec![1.0, 1.0, 0.0],
            ladder: vec![0.4, 0.2, 0.1, 0.05],
            s: 1.0,
            a: [-1.0, 1.0],
            omega: [-8.0, 8.0],
            cells: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorConfig {
    pub psi: String,
    /// "contact", "perturbed" or "control".
    pub field: String,
    pub lambda: f64,
    pub u_center: Vec<f64>,
    pub u_radius: f64,
    pub reaction: String,
    pub ladder: Vec<f64>,
    pub k: [f64; 2],
    pub k_cells: usize,
    /// "spherical" or "midpoint".
    pub rule: String,
    pub midpoint_cells: usize,
    pub tau: f64,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        Self {
            psi: "bump".into(),
            field: "contact".into(),
            lambda: 1.0,
            u_center: vec![0.2, 0.1, 0.0],
            u_radius: 1.0,
            reaction: "zero".into(),
            ladder: vec![0.2, 0.1, 0.05, 0.025],
            k: [-1.0, 1.0],
            k_cells: 8,
            rule: "spherical".into(),
            midpoint_cells: 12,
            tau: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub psi: String,
    pub field: String,
    pub lambda: f64,
    pub horizon: f64,
    /// Time steps, strictly decreasing; the last one is dumped.
    pub dt_ladder: Vec<f64>,
    pub seeds: usize,
    pub seed_box: [f64; 2],
    pub region: [f64; 2],
    pub region_cells: usize,
    pub defect_tol: f64,
    pub noncontact_min: f64,
    pub pushforward_slack: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            psi: "bump".into(),
            field: "contact".into(),
            lambda: 1.0,
            horizon: 1.0,
            dt_ladder: vec![4e-3, 2e-3, 1e-3],
            seeds: 8,
            seed_box: [-0.5, 0.5],
            region: [-1.2, 1.2],
            region_cells: 16,
            defect_tol: 1e-6,
            noncontact_min: 0.1,
            pushforward_slack: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub psi: String,
    pub field: String,
    pub lambda: f64,
    /// "oscillating", "y", "bump" or "zero".
    pub u0: String,
    pub reaction: String,
    /// "plus" or "minus".
    pub form: String,
    /// "multiplicative" or "additive".
    pub mode: String,
    /// "square", "identity", "sin" or "arctan".
    pub beta: String,
    pub horizon: f64,
    pub h: f64,
    pub levels: usize,
    pub out_box: [f64; 2],
    pub test_horizon: f64,
    pub chi_center: Vec<f64>,
    pub chi_radius: f64,
    pub chi_power: i32,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            psi: "linear-x".into(),
            field: "contact".into(),
            lambda: 1.0,
            u0: "oscillating".into(),
            reaction: "zero".into(),
            form: "plus".into(),
            mode: "multiplicative".into(),
            beta: "square".into(),
            horizon: 1.0,
            h: 0.05,
            levels: 2,
            out_box: [-0.6, 0.6],
            test_horizon: 0.8,
            chi_center: vec![0.05, 0.1, 0.0],
            chi_radius: 0.45,
            chi_power: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub betas: Vec<f64>,
    pub cells: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { betas: vec![0.4, 0.3, 0.2, 0.15], cells: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationConfig {
    pub count: usize,
    pub contact: bool,
    pub cells: usize,
    pub order: usize,
    pub s_dual: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self { count: 50, contact: true, cells: 8, order: 4, s_dual: 2.0 }
    }
}

impl Config {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("config field `n` must be at least 1");
        }
        let decreasing = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() || v.iter().any(|&e| !(e > 0.0)) || v.windows(2).any(|w| !(w[0] > w[1])) {
                bail!("config field `{name}` must be a positive strictly decreasing ladder");
            }
            Ok(())
        };
        decreasing("quotients.ladder", &self.quotients.ladder)?;
        decreasing("commutator.ladder", &self.commutator.ladder)?;
        decreasing("flow.dt_ladder", &self.flow.dt_ladder)?;
        decreasing("counterexample.betas", &self.counterexample.betas)?;
        let dim = 2 * self.n + 1;
        for (name, v) in [
            ("quotients.w", &self.quotients.w),
            ("commutator.u_center", &self.commutator.u_center),
            ("transport.chi_center", &self.transport.chi_center),
        ] {
            if v.len() != dim {
                bail!("config field `{name}` needs {dim} coordinates, found {}", v.len());
            }
        }
        for (name, b) in [
            ("quotients.a", self.quotients.a),
            ("quotients.omega", self.quotients.omega),
            ("commutator.k", self.commutator.k),
            ("flow.seed_box", self.flow.seed_box),
            ("flow.region", self.flow.region),
            ("transport.out_box", self.transport.out_box),
        ] {
            if !(b[0] < b[1]) {
                bail!("config field `{name}` must satisfy lower < upper");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), cfg);
    }
}
