//! Run configuration files (TOML).
//!
//! ```toml
//! seed = 7
//! out = "runs/farm4"
//!
//! [problem]
//! kind = "farm"            # or "synthetic", "inline"
//! layout = "layout.toml"
//!
//! [learn]
//! flows = 8
//! optimiser = "adam"
//! lr = 1e-3
//! hidden = 30
//! n = 500
//! n_samples = 2000
//! t_inc = 1000
//! buffer_size = 5000000
//! steps = 300000
//!
//! [grid]
//! r_min = [-1.0, 0.0]
//! r_max = [0.0, 2.0e7]
//! n_bins = 2000
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distribution::CdfGrid;
use crate::error::{Error, Result};
use crate::learning::LearnConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSource {
    Farm {
        layout: PathBuf,
    },
    Synthetic {
        spec: PathBuf,
    },
    /// Graph given inline with seeded Gaussian generators.
    Inline {
        action_counts: Vec<usize>,
        scopes: Vec<Vec<usize>>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        generator_seed: u64,
    },
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
    pub n_bins: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<CdfGrid> {
        CdfGrid::new(self.r_min.clone(), self.r_max.clone(), self.n_bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Cross-sum sample cap; defaults to `learn.n_samples`.
    pub cap: Option<usize>,
    /// Disable the cap entirely.
    pub uncapped: bool,
    pub prune: bool,
    pub order: Option<Vec<usize>>,
    pub dump_distributions: bool,
    /// Members dumped with `dump_distributions`; 0 dumps all.
    pub dump_limit: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            cap: None,
            uncapped: false,
            prune: true,
            order: None,
            dump_distributions: false,
            dump_limit: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    /// Ground-truth draws per factor and local action, rounded to integers.
    pub samples_per_action: usize,
    pub limit: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            samples_per_action: 5,
            limit: crate::oracle::DEFAULT_JOINT_ACTION_LIMIT as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub problem: ProblemSource,
    #[serde(default)]
    pub learn: LearnConfig,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Parse `path` and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out);
        match &mut cfg.problem {
            ProblemSource::Farm { layout } => fix(layout),
            ProblemSource::Synthetic { spec } => fix(spec),
            ProblemSource::Inline { .. } => {}
        }
        cfg.validate().map_err(|e| Error::parse(path, e))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.learn.validate()?;
        if let Some(g) = &self.grid {
            g.build()?;
        }
        if self.solve.cap == Some(0) {
            return Err(Error::Config("solve.cap must be positive".into()));
        }
        Ok(())
    }

    /// Effective cross-sum cap.
    pub fn cap(&self) -> Option<usize> {
        if self.solve.uncapped {
            None
        } else {
            Some(self.solve.cap.unwrap_or(self.learn.n_samples))
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FARM: &str = r#"
seed = 7
out = "run"

[problem]
kind = "farm"
layout = "layout.toml"

[learn]
flows = 8
optimiser = "adam"
lr = 1e-3
hidden = 30
n = 500
n_samples = 2000
t_inc = 1000
buffer_size = 5000000
steps = 300000

[grid]
r_min = [-1.0, 0.0]
r_max = [0.0, 2.0e7]
n_bins = 2000
"#;

    #[test]
    fn table_names_parse() {
        let c = RunConfig::from_toml(FARM).unwrap();
        assert_eq!(
            c.learn,
            LearnConfig {
                seed: 0,
                ..LearnConfig::default()
            }
        );
        assert_eq!(c.grid.as_ref().unwrap().n_bins, 2000);
        assert_eq!(c.cap(), Some(2000));
        assert!(c.solve.prune);
    }

    #[test]
    fn paths_resolve_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, FARM).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.out, dir.path().join("run"));
        assert_eq!(
            c.problem,
            ProblemSource::Farm {
                layout: dir.path().join("layout.toml")
            }
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(
            RunConfig::from_toml(&FARM.replace("n_bins = 2000", "n_bins = 2000\nbins = 3"))
                .is_err()
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, FARM.replace("steps = 300000", "steps = 0")).unwrap();
        assert!(RunConfig::load(&p).is_err());
        std::fs::write(
            &p,
            FARM.replace("optimiser = \"adam\"", "optimiser = \"sgd\""),
        )
        .unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::from_toml(FARM).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn inline_problem() {
        let c = RunConfig::from_toml(
            "[problem]\nkind = \"inline\"\naction_counts = [2, 2, 2]\nscopes = [[0, 1], [1, 2]]\n",
        )
        .unwrap();
        assert!(matches!(c.problem, ProblemSource::Inline { dim: 2, .. }));
        assert!(c.grid.is_none());
    }
}
