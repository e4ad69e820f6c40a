//! Run configuration: one TOML file with a section per subcommand, merged
//! with command-line overrides and echoed back next to the outputs.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wmprior::solver::{AlphaMode, BlurKernel, PipelineConfig, PriorKind};
use wmprior::spde::Boundary;
use wmprior::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub nu: f64,
    /// Isotropic length, or the major length when `ell2` is set.
    pub ell: f64,
    pub ell2: Option<f64>,
    pub theta_deg: f64,
    pub boundary: Boundary,
    /// Domain extension factor; `None` picks it from the correlation length.
    pub extension: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            nu: 1.0,
            ell: 0.25,
            ell2: None,
            theta_deg: 0.0,
            boundary: Boundary::Periodic,
            extension: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectionSection {
    pub n: usize,
    pub samples: usize,
    /// Relative Frobenius error below which the check passes.
    pub threshold: f64,
}

impl Default for ConnectionSection {
    fn default() -> Self {
        Self {
            n: 32,
            samples: 20_000,
            threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub count: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 64, count: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub input: Option<PathBuf>,
    pub directional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub input: Option<PathBuf>,
    /// Nonzero pixels are observed.
    pub mask: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub prior: PriorKind,
    pub blur: BlurKernel,
    pub extension: f64,
    /// PNG bit depth of the reconstruction.
    pub bits: u8,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            input: None,
            mask: None,
            truth: None,
            regions: None,
            prior: PriorKind::Isotropic,
            blur: BlurKernel::None,
            extension: 1.5,
            bits: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub prior: PriorSection,
    pub connection: ConnectionSection,
    pub sample: SampleSection,
    pub fit: FitSection,
    pub solve: SolveSection,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }
}

/// `gcv`, `oracle`, `noise=<sigma>` or a positive number.
pub fn parse_alpha(s: &str) -> Result<AlphaMode> {
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "gcv" => Ok(AlphaMode::Gcv),
        "oracle" => Ok(AlphaMode::Oracle),
        _ => {
            if let Some(v) = t.strip_prefix("noise=") {
                let sigma = v
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad noise level '{v}'")))?;
                return Ok(AlphaMode::KnownNoise { sigma });
            }
            let value = t
                .parse()
                .map_err(|_| Error::Parse(format!("alpha must be gcv, oracle, noise=<sigma> or a number, got '{s}'")))?;
            Ok(AlphaMode::Fixed { value })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::parse("seed = 4\n[prior]\nnu = 2.0\nboundary = \"dirichlet\"\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.prior.nu, 2.0);
        assert_eq!(c.prior.ell, 0.25);
        assert_eq!(c.prior.boundary, Boundary::Dirichlet);
        assert_eq!(c.connection, ConnectionSection::default());
    }

    #[test]
    fn nested_pipeline_keys() {
        let c = RunConfig::parse("[pipeline]\nmax_iterations = 4\n[pipeline.alpha]\nmode = \"oracle\"\n").unwrap();
        assert_eq!(c.pipeline.max_iterations, 4);
        assert_eq!(c.pipeline.alpha, AlphaMode::Oracle);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[prior]\nnuu = 2.0\n").is_err());
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn alpha_flags() {
        assert_eq!(parse_alpha("GCV").unwrap(), AlphaMode::Gcv);
        assert_eq!(parse_alpha("oracle").unwrap(), AlphaMode::Oracle);
        assert_eq!(parse_alpha("1e-3").unwrap(), AlphaMode::Fixed { value: 1e-3 });
        assert_eq!(parse_alpha("noise=0.02").unwrap(), AlphaMode::KnownNoise { sigma: 0.02 });
        assert!(parse_alpha("best").is_err());
    }
}
