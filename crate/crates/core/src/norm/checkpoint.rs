use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::affine::{ChannelAffine, ConditionalAffineBank};
use super::stats::BranchStats;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    tensors: BTreeMap<String, String>,
}

/// Named tensors persisted as one SBNT file per role plus a JSON manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

fn valid_role(role: &str) -> bool {
    !role.is_empty()
        && role
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && !role.starts_with('.')
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, role: impl Into<String>, t: Tensor) -> Result<()> {
        let role = role.into();
        if !valid_role(&role) {
            return Err(Error::InvalidArgument(format!("invalid checkpoint role {role:?}")));
        }
        self.tensors.insert(role, t);
        Ok(())
    }

    pub fn get(&self, role: &str) -> Result<&Tensor> {
        self.tensors
            .get(role)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no role {role:?}")))
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (role, t) in &self.tensors {
            let file = format!("{role}.sbnt");
            write_tensor(BufWriter::new(File::create(dir.join(&file))?), t)?;
            files.insert(role.clone(), file);
        }
        let manifest = Manifest {
            version: 1,
            tensors: files,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        if manifest.version != 1 {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                manifest.version
            )));
        }
        let mut ckpt = Checkpoint::new();
        for (role, file) in manifest.tensors {
            if !valid_role(file.trim_end_matches(".sbnt")) {
                return Err(Error::Format(format!("suspicious file name {file:?}")));
            }
            let t = read_tensor(BufReader::new(File::open(dir.join(&file))?))?;
            ckpt.insert(role, t)?;
        }
        Ok(ckpt)
    }

    pub fn put_affine(&mut self, prefix: &str, a: &ChannelAffine) -> Result<()> {
        self.insert(format!("{prefix}.gamma"), a.gamma.clone())?;
        self.insert(format!("{prefix}.beta"), a.beta.clone())
    }

    pub fn affine(&self, prefix: &str) -> Result<ChannelAffine> {
        ChannelAffine::new(
            self.get(&format!("{prefix}.gamma"))?.clone(),
            self.get(&format!("{prefix}.beta"))?.clone(),
        )
    }

    pub fn put_bank(&mut self, prefix: &str, bank: &ConditionalAffineBank) -> Result<()> {
        for (i, e) in bank.entries().iter().enumerate() {
            self.put_affine(&format!("{prefix}.{i}"), e)?;
        }
        Ok(())
    }

    pub fn bank(&self, prefix: &str) -> Result<ConditionalAffineBank> {
        let mut entries = Vec::new();
        while self.tensors.contains_key(&format!("{prefix}.{}.gamma", entries.len())) {
            entries.push(self.affine(&format!("{prefix}.{}", entries.len()))?);
        }
        ConditionalAffineBank::new(entries)
    }

    pub fn put_stats(&mut self, prefix: &str, stats: &BranchStats) -> Result<()> {
        for b in 0..stats.branches() {
            self.insert(format!("{prefix}.{b}.running_mean"), stats.running_mean(b)?.clone())?;
            self.insert(format!("{prefix}.{b}.running_var"), stats.running_var(b)?.clone())?;
        }
        Ok(())
    }

    /// Restores running estimates into `stats`, which fixes branch count and mode.
    pub fn load_stats(&self, prefix: &str, stats: &mut BranchStats) -> Result<()> {
        for b in 0..stats.branches() {
            let mean = self.get(&format!("{prefix}.{b}.running_mean"))?.clone();
            let var = self.get(&format!("{prefix}.{b}.running_var"))?.clone();
            stats.set_running(b, mean, var)?;
        }
        Ok(())
    }
}
