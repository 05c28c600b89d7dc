//! Chain registry loaded from TOML.
//!
//! Schema (one `[[chain]]` table per robot):
//!
//! ```toml
//! [[chain]]
//! name = "arm-X"
//! home = [0.0, 0.1, ...]              # radians, one per joint
//! tip_offset = [0.0, 0.0, 0.2]        # last link -> gripper tip, meters
//! tip_rpy = [0.0, 0.0, 0.0]           # optional, intrinsic XYZ radians
//!
//! [[chain.joint]]                     # 5 to 8 revolute joints, base to tip
//! axis = [0.0, 0.0, 1.0]              # unit axis in the joint frame
//! origin = [0.0, 0.0, 0.3]            # joint frame in the parent link frame
//! origin_rpy = [0.0, 0.0, 0.0]        # optional
//! limits = [-2.9, 2.9]
//!
//! [[chain.link]]                      # joint count + 1 links, base first
//! capsules = [
//!   { a = [0, 0, 0], b = [0, 0, 0.3], radius = 0.05, color = [200, 200, 200] },
//! ]
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::Deserialize;

use super::{Capsule, JointConfig, JointSpec, KinematicChain, KinematicsError, LinkGeometry};
use crate::geometry::{Pose, Rotation};

/// Environment variable naming a registry file that replaces the bundled one.
pub const REGISTRY_ENV: &str = "XEMBODY_REGISTRY";

const BUILTIN: &str = include_str!("chains.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    chain: Vec<ChainEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainEntry {
    name: String,
    home: Vec<f64>,
    #[serde(default)]
    tip_offset: [f64; 3],
    #[serde(default)]
    tip_rpy: [f64; 3],
    joint: Vec<JointEntry>,
    link: Vec<LinkEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    axis: [f64; 3],
    #[serde(default)]
    origin: [f64; 3],
    #[serde(default)]
    origin_rpy: [f64; 3],
    limits: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    #[serde(default)]
    capsules: Vec<CapsuleEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapsuleEntry {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    color: [u8; 3],
}

fn pose_from(t: [f64; 3], rpy: [f64; 3]) -> Pose {
    Pose::new(Rotation::from_euler(rpy[0], rpy[1], rpy[2]), Vector3::from(t))
}

impl ChainEntry {
    fn into_chain(self) -> Result<KinematicChain, KinematicsError> {
        let joints = self
            .joint
            .into_iter()
            .map(|j| JointSpec {
                axis: Vector3::from(j.axis),
                origin: pose_from(j.origin, j.origin_rpy),
                limits: (j.limits[0], j.limits[1]),
            })
            .collect();
        let links = self
            .link
            .into_iter()
            .map(|l| LinkGeometry {
                capsules: l
                    .capsules
                    .into_iter()
                    .map(|c| Capsule {
                        a: Vector3::from(c.a),
                        b: Vector3::from(c.b),
                        radius: c.radius,
                        color: c.color,
                    })
                    .collect(),
            })
            .collect();
        KinematicChain::new(
            self.name,
            joints,
            links,
            pose_from(self.tip_offset, self.tip_rpy),
            JointConfig(self.home),
        )
    }
}

/// Robots by name.
#[derive(Debug, Clone, Default)]
pub struct ChainRegistry {
    chains: BTreeMap<String, Arc<KinematicChain>>,
}

impl ChainRegistry {
    /// The four bundled arms `arm-A` .. `arm-D`.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("bundled registry is valid")
    }

    /// Bundled registry, or the file named by [`REGISTRY_ENV`] when set.
    pub fn from_env() -> Result<Self, KinematicsError> {
        match std::env::var_os(REGISTRY_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| KinematicsError::Registry(e.to_string()))?;
        let mut reg = Self::default();
        for entry in file.chain {
            reg.insert(entry.into_chain()?)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, chain: KinematicChain) -> Result<(), KinematicsError> {
        let name = chain.name().to_owned();
        if self.chains.contains_key(&name) {
            return Err(KinematicsError::Registry(format!("duplicate robot '{name}'")));
        }
        self.chains.insert(name, Arc::new(chain));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Arc<KinematicChain>, KinematicsError> {
        self.chains
            .get(name)
            .ok_or_else(|| KinematicsError::UnknownChain(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.chains.keys().map(String::as_str)
    }

    pub fn chains(&self) -> impl Iterator<Item = &KinematicChain> {
        self.chains.values().map(|c| c.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_four_distinct_arms() {
        let reg = ChainRegistry::builtin();
        let names: Vec<&str> = reg.names().collect();
        assert_eq!(names, ["arm-A", "arm-B", "arm-C", "arm-D"]);
        let dofs: Vec<usize> = reg.chains().map(|c| c.dof()).collect();
        assert_eq!(dofs, [7, 6, 7, 6]);
        let palettes: Vec<_> = reg.chains().map(|c| c.palette()).collect();
        for i in 0..palettes.len() {
            for j in i + 1..palettes.len() {
                assert_ne!(palettes[i], palettes[j]);
            }
        }
    }

    #[test]
    fn home_poses_point_the_gripper_down() {
        for chain in ChainRegistry::builtin().chains() {
            let z = chain.home_pose().rotation.apply(&Vector3::z());
            assert!(z.z < -0.99, "{}: {z:?}", chain.name());
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ChainRegistry::from_toml_str("[[chain]]\nname = 1").is_err());
        let two_joints = r#"
            [[chain]]
            name = "short"
            home = [0.0, 0.0]
            [[chain.joint]]
            axis = [0.0, 0.0, 1.0]
            limits = [-1.0, 1.0]
            [[chain.joint]]
            axis = [0.0, 0.0, 1.0]
            limits = [-1.0, 1.0]
            [[chain.link]]
            [[chain.link]]
            [[chain.link]]
        "#;
        assert!(matches!(
            ChainRegistry::from_toml_str(two_joints),
            Err(KinematicsError::InvalidChain { .. })
        ));
    }

    #[test]
    fn user_file_round_trips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chains.toml");
        std::fs::write(&path, BUILTIN.replace("arm-A", "arm-X")).unwrap();
        let reg = ChainRegistry::load(&path).unwrap();
        assert!(reg.get("arm-X").is_ok());
        assert!(matches!(reg.get("arm-A"), Err(KinematicsError::UnknownChain(_))));
    }
}
