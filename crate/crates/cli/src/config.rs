//! Run configuration: a TOML file mirroring [`RunConfig`], overridden by
//! command-line flags.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xembody::generate::{DemoConfig, PairedConfig};
use xembody::kinematics::IkConfig;
use xembody::plugin::ExternalStage;
use xembody::roaug::{GeometricTranslator, RoAugConfig, RoAugStages};
use xembody::sampler::ViAugConfig;
use xembody::viaug::{Reprojector, ViewSynthesizer};

/// External stage commands; unset stages use the geometric defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PluginConfig {
    pub segmenter: Option<String>,
    pub translator: Option<String>,
    pub inpainter: Option<String>,
    pub synthesizer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    pub strict: bool,
    pub paired: PairedConfig,
    pub demo: DemoConfig,
    pub roaug: RoAugConfig,
    pub viaug: ViAugConfig,
    pub reprojector: Reprojector,
    pub ik: IkConfig,
    pub plugins: PluginConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            workers: 0,
            strict: false,
            paired: PairedConfig::default(),
            demo: DemoConfig::default(),
            roaug: RoAugConfig::default(),
            viaug: ViAugConfig::default(),
            reprojector: Reprojector::default(),
            ik: IkConfig::default(),
            plugins: PluginConfig::default(),
        }
    }
}

fn external(kind: &str, command: &str) -> Result<ExternalStage> {
    ExternalStage::parse(command).with_context(|| format!("plugins.{kind}: empty command"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.paired.robot_pose.validate()?;
        self.paired.camera.validate()?;
        self.demo.camera.validate()?;
        self.viaug.validate()?;
        if self.paired.cameras_per_pose == 0 {
            bail!("paired.cameras_per_pose must be at least 1");
        }
        if self.demo.frames == 0 {
            bail!("demo.frames must be at least 1");
        }
        Ok(())
    }

    pub fn resolved_workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }

    pub fn roaug_stages(&self) -> Result<RoAugStages> {
        let mut stages = RoAugStages {
            translator: Arc::new(GeometricTranslator { ik: self.ik.clone() }),
            ..RoAugStages::default()
        };
        if let Some(cmd) = &self.plugins.segmenter {
            stages.segmenter = Arc::new(external("segmenter", cmd)?);
        }
        if let Some(cmd) = &self.plugins.translator {
            stages.translator = Arc::new(external("translator", cmd)?);
        }
        if let Some(cmd) = &self.plugins.inpainter {
            stages.inpainter = Arc::new(external("inpainter", cmd)?);
        }
        Ok(stages)
    }

    pub fn synthesizer(&self) -> Result<Box<dyn ViewSynthesizer>> {
        Ok(match &self.plugins.synthesizer {
            Some(cmd) => Box::new(external("synthesizer", cmd)?),
            None => Box::new(self.reprojector),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str(
            "master_seed = 9\n[viaug]\nmode = \"consistent\"\n[roaug]\nbrightness_range = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.roaug.brightness_range, 10);
        assert!(!cfg.roaug.strict);
        assert_eq!(cfg.viaug.tx_range, ViAugConfig::default().tx_range);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\n").is_err());
    }

    #[test]
    fn effective_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
