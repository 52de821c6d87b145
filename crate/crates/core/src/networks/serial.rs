//! Self-describing JSON file format for networks.
//!
//! Parameters are written with shortest round-trip float formatting, so a
//! save/load cycle reproduces them bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, SegmentInfo};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "gradnet-network/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub spec: NetworkSpec,
    pub segments: Vec<SegmentInfo>,
    pub params: Vec<f64>,
}

impl NetworkFile {
    pub fn from_network(net: &Network) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            spec: net.spec(),
            segments: net.segments(),
            params: net.params(),
        }
    }

    /// Rebuilds the network. Constraint tags are *not* enforced here so that
    /// a verifier can report on files with out-of-bounds values.
    pub fn into_network(self) -> Result<Network> {
        if self.format != FORMAT_TAG {
            return Err(Error::Config(format!("unknown network format {:?}", self.format)));
        }
        let mut net = Network::init(&self.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        if net.segments() != self.segments {
            return Err(Error::Config("segment map does not match the network spec".into()));
        }
        net.set_params(&self.params)?;
        Ok(net)
    }
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from_network(self))?)
    }

    pub fn from_json(s: &str) -> Result<Network> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.into_network()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        Network::from_json(&std::fs::read_to_string(path)?)
    }
}
