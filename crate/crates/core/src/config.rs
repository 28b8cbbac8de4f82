//! JSON run configuration: geometry, profile, problem variant, coefficient
//! data, ε sweep with its h-coupling rule, solver settings, and output
//! paths. The schema is documented in docs/config.md.

use crate::assembly::{QuadSpec, Variant};
use crate::fields::{MatrixData, RadialFn, ScalarData};
use crate::geometry::{SignedGeometry, Vec2};
use crate::harness::{Case, Coupling, HarnessError, ProfileChoice, Reference};
use crate::solve::Precond;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    One(f64),
    List(Vec<f64>),
}

impl EpsSpec {
    pub fn list(&self) -> Vec<f64> {
        match self {
            EpsSpec::One(e) => vec![*e],
            EpsSpec::List(l) => l.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum SubdivSpec {
    Auto(String),
    Fixed(usize),
}

/// Coefficient entry: `{"const": c}`, `{"radial": "name"}`, or
/// `{"fourier": [[k, amp], ...]}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Const {
        #[serde(rename = "const")]
        value: f64,
    },
    Radial {
        radial: String,
    },
    Fourier {
        fourier: Vec<(u32, f64)>,
    },
}

impl DataSpec {
    pub fn to_scalar(&self, key: &str) -> Result<ScalarData, HarnessError> {
        Ok(match self {
            DataSpec::Const { value } => ScalarData::Constant(*value),
            DataSpec::Radial { radial } => {
                let rf = RadialFn::from_name(radial).ok_or_else(|| {
                    HarnessError::Config(format!(
                        "{key}: unknown radial function {radial:?} (registry: one, zero)"
                    ))
                })?;
                ScalarData::radial(rf)
            }
            DataSpec::Fourier { fourier } => ScalarData::AngularFourier(fourier.clone()),
        })
    }
}

/// Overridable pass/fail thresholds used by the sweep flags; the shipped
/// defaults match the acceptance suite.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Each ε-halving must shrink the restricted H¹ error by this factor.
    pub halving_factor: f64,
    /// Relative restricted H¹ error at the final ε.
    pub final_rel_err: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            halving_factor: 1.5,
            final_rel_err: 0.05,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub geometry: String,
    pub radius: Option<f64>,
    pub radii: Option<[f64; 2]>,
    pub center: Option<[f64; 2]>,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub profile: String,
    pub epsilon: EpsSpec,
    pub rho: Option<f64>,
    pub h: Option<f64>,
    pub problem: String,
    #[serde(rename = "K")]
    pub coupling: Option<f64>,
    pub beta: Option<f64>,
    pub m: Option<f64>,
    pub quad_order: Option<usize>,
    pub subdiv: Option<SubdivSpec>,
    #[serde(rename = "A")]
    pub a_mat: Option<DataSpec>,
    pub a: Option<DataSpec>,
    pub f: Option<DataSpec>,
    #[serde(rename = "B")]
    pub b_mat: Option<DataSpec>,
    pub b: Option<DataSpec>,
    pub g: Option<DataSpec>,
    pub tol: Option<f64>,
    pub maxit: Option<usize>,
    pub precond: Option<String>,
    pub reference: Option<String>,
    pub eta: Option<f64>,
    pub floor: Option<f64>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// A parsed configuration: the case plus sweep and output settings.
pub struct LoadedConfig {
    pub case: Case,
    pub eps_list: Vec<f64>,
    pub coupling_rule: Coupling,
    pub out_dir: String,
    pub threads: Option<usize>,
    pub thresholds: Thresholds,
    /// Raw JSON, echoed into reports.
    pub echo: serde_json::Value,
}

pub fn load_config_str(text: &str) -> Result<LoadedConfig, HarnessError> {
    let echo: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| HarnessError::Config(format!("invalid JSON: {e}")))?;
    let cfg: FileConfig = serde_json::from_str(text)
        .map_err(|e| HarnessError::Config(format!("{e}")))?;

    let center = cfg.center.map_or(Vec2::new(0.0, 0.0), |c| Vec2::new(c[0], c[1]));
    let geom = match cfg.geometry.as_str() {
        "circle" => {
            let r = cfg
                .radius
                .ok_or_else(|| HarnessError::Config("circle geometry needs `radius`".into()))?;
            SignedGeometry::circle(center, r, cfg.bbox)?
        }
        "ellipse" => {
            let r = cfg
                .radii
                .ok_or_else(|| HarnessError::Config("ellipse geometry needs `radii`".into()))?;
            SignedGeometry::ellipse(center, (r[0], r[1]), cfg.bbox)?
        }
        other => {
            return Err(HarnessError::Config(format!(
                "geometry must be \"circle\" or \"ellipse\", got {other:?}"
            )))
        }
    };

    let profile = match cfg.profile.as_str() {
        "double-well" => ProfileChoice::DoubleWell,
        "double-obstacle" => ProfileChoice::DoubleObstacle,
        other => {
            return Err(HarnessError::Config(format!(
                "profile must be \"double-well\" or \"double-obstacle\", got {other:?}"
            )))
        }
    };

    let variant = match cfg.problem.as_str() {
        "cdd" => Variant::Cdd,
        "sdd" => Variant::Sdd,
        "rdd" => Variant::Rdd,
        "dddh" => Variant::Dddh,
        "nddh" => Variant::Nddh,
        other => {
            return Err(HarnessError::Config(format!(
                "problem must be one of cdd, sdd, rdd, dddh, nddh; got {other:?}"
            )))
        }
    };

    let eps_list = cfg.epsilon.list();
    if eps_list.is_empty() {
        return Err(HarnessError::Config("epsilon list is empty".into()));
    }
    let coupling_rule = match (cfg.h, cfg.rho) {
        (Some(h), None) => Coupling::FixedH(h),
        (None, Some(rho)) => Coupling::Rho(rho),
        (None, None) => Coupling::Rho(4.0),
        (Some(_), Some(_)) => {
            return Err(HarnessError::Config(
                "give either `h` or `rho`, not both".into(),
            ))
        }
    };

    let mut quad = QuadSpec::default();
    if let Some(o) = cfg.quad_order {
        quad.order = o;
    }
    match &cfg.subdiv {
        None => {}
        Some(SubdivSpec::Auto(s)) if s == "auto" => {}
        Some(SubdivSpec::Auto(s)) => {
            return Err(HarnessError::Config(format!(
                "subdiv must be \"auto\" or an integer, got {s:?}"
            )))
        }
        Some(SubdivSpec::Fixed(n)) => quad.subdiv = Some(*n),
    }

    let mut case = Case::new(Arc::new(geom), profile, variant);
    case.quad = quad;
    if let Some(k) = cfg.coupling {
        case.coupling = k;
    }
    if let Some(b) = cfg.beta {
        case.beta = b;
    }
    if let Some(m) = cfg.m {
        case.m = m;
    }
    if let Some(spec) = &cfg.a_mat {
        case.a_mat = MatrixData::Iso(spec.to_scalar("A")?);
    }
    if let Some(spec) = &cfg.a {
        case.a_low = spec.to_scalar("a")?;
    }
    if let Some(spec) = &cfg.f {
        case.f = spec.to_scalar("f")?;
    }
    if let Some(spec) = &cfg.b_mat {
        case.b_mat = MatrixData::Iso(spec.to_scalar("B")?);
    }
    if let Some(spec) = &cfg.b {
        case.b_low = spec.to_scalar("b")?;
    }
    if let Some(spec) = &cfg.g {
        case.g = spec.to_scalar("g")?;
    }
    if let Some(t) = cfg.tol {
        case.tol = t;
    }
    if let Some(m) = cfg.maxit {
        case.maxit = m;
    }
    case.precond = match cfg.precond.as_deref() {
        None | Some("jacobi") => Precond::Jacobi,
        Some("none") => Precond::None,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "precond must be \"jacobi\" or \"none\", got {other:?}"
            )))
        }
    };
    case.reference = match cfg.reference.as_deref() {
        None | Some("none") => Reference::None,
        Some("oracle") => Reference::Oracle,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "reference must be \"oracle\" or \"none\", got {other:?}"
            )))
        }
    };
    case.eta = cfg.eta;
    case.floor = cfg.floor;
    if let Some(s) = cfg.seed {
        case.seed = s;
    }

    Ok(LoadedConfig {
        case,
        eps_list,
        coupling_rule,
        out_dir: cfg.out.unwrap_or_else(|| "out".into()),
        threads: cfg.threads,
        thresholds: cfg.thresholds,
        echo,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    load_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "geometry": "circle", "radius": 1.0, "box": [-2, 2, -2, 2],
        "profile": "double-obstacle",
        "epsilon": [0.2, 0.1, 0.05],
        "rho": 4.0,
        "problem": "rdd",
        "beta": 1.0,
        "a": {"const": 1.0}, "f": {"const": 1.0}, "g": {"const": 1.0},
        "reference": "oracle",
        "seed": 7
    }"#;

    #[test]
    fn good_config_loads() {
        let lc = load_config_str(GOOD).unwrap();
        assert_eq!(lc.eps_list, vec![0.2, 0.1, 0.05]);
        assert!(matches!(lc.coupling_rule, Coupling::Rho(r) if r == 4.0));
        assert_eq!(lc.case.seed, 7);
        assert!(matches!(lc.case.reference, Reference::Oracle));
    }

    #[test]
    fn missing_epsilon_is_structured_error() {
        let bad = GOOD.replace(r#""epsilon": [0.2, 0.1, 0.05],"#, "");
        match load_config_str(&bad) {
            Err(e) => {
                let msg = format!("{e}");
                assert!(msg.contains("epsilon"), "{msg}");
            }
            Ok(_) => panic!("config without epsilon must be rejected"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = GOOD.replace(r#""seed": 7"#, r#""seed": 7, "typo_key": 1"#);
        assert!(load_config_str(&bad).is_err());
    }

    #[test]
    fn fourier_data_spec() {
        let cfg = GOOD.replace(
            r#""g": {"const": 1.0}"#,
            r#""g": {"fourier": [[1, 1.0]]}"#,
        );
        let lc = load_config_str(&cfg).unwrap();
        match lc.case.g {
            ScalarData::AngularFourier(m) => assert_eq!(m, vec![(1, 1.0)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn radial_registry() {
        let cfg = GOOD.replace(r#""f": {"const": 1.0}"#, r#""f": {"radial": "one"}"#);
        assert!(load_config_str(&cfg).is_ok());
        let cfg = GOOD.replace(r#""f": {"const": 1.0}"#, r#""f": {"radial": "nope"}"#);
        assert!(load_config_str(&cfg).is_err());
    }
}
