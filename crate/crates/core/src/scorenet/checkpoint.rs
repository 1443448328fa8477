use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{architecture_hash, Network, NetworkConfig};
use super::ScoreNetwork;
use crate::density::{NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "hggdp-checkpoint";
const VERSION: u32 = 1;

/// Text header preceding the raw little-endian `f32` parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub architecture_hash: String,
    pub network: NetworkConfig,
    pub replicas: usize,
    pub schedule: ScheduleSpec,
    pub patch_size: Option<usize>,
    pub seed: u64,
    pub param_count: usize,
}

/// Fields a caller requires of a checkpoint; `None` accepts anything.
#[derive(Clone, Debug, Default)]
pub struct CheckpointExpectation {
    pub architecture_hash: Option<String>,
    pub replicas: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub patch_size: Option<Option<usize>>,
}

fn mismatch(field: &'static str, found: impl std::fmt::Debug, expected: impl std::fmt::Debug) -> Error {
    Error::CheckpointMismatch {
        field,
        found: format!("{found:?}"),
        expected: format!("{expected:?}"),
    }
}

impl CheckpointExpectation {
    pub fn check(&self, h: &CheckpointHeader) -> Result<()> {
        if let Some(a) = &self.architecture_hash {
            if a != &h.architecture_hash {
                return Err(mismatch("architecture_hash", &h.architecture_hash, a));
            }
        }
        if let Some(n) = self.replicas {
            if n != h.replicas {
                return Err(mismatch("replicas", h.replicas, n));
            }
        }
        if let Some(s) = self.schedule {
            if s != h.schedule {
                return Err(mismatch("schedule", h.schedule, s));
            }
        }
        if let Some(p) = self.patch_size {
            if p != h.patch_size {
                return Err(mismatch("patch_size", h.patch_size, p));
            }
        }
        Ok(())
    }
}

impl ScoreNetwork {
    pub fn header(&self) -> CheckpointHeader {
        let net = self.network();
        CheckpointHeader {
            version: VERSION,
            architecture_hash: net.architecture_hash(),
            network: net.config().clone(),
            replicas: net.replicas(),
            schedule: net.schedule().spec(),
            patch_size: self.patch_size(),
            seed: self.seed(),
            param_count: net.param_count(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(f, "{MAGIC} {VERSION}")?;
        writeln!(f, "{}", serde_json::to_string(&self.header())?)?;
        for p in self.network().params() {
            f.write_all(&p.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_expecting(path, &CheckpointExpectation::default())
    }

    /// Loads a checkpoint, failing on any header field that differs from
    /// `expect` or is internally inconsistent.
    pub fn load_expecting(path: impl AsRef<Path>, expect: &CheckpointExpectation) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, "missing checkpoint version"))?;
        if version != VERSION {
            return Err(mismatch("version", version, VERSION));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if header.version != VERSION {
            return Err(mismatch("version", header.version, VERSION));
        }
        let schedule = NoiseSchedule::from_spec(header.schedule)?;
        let hash = architecture_hash(&header.network, &schedule);
        if hash != header.architecture_hash {
            return Err(mismatch("architecture_hash", &header.architecture_hash, hash));
        }
        if header.replicas != header.network.replicas {
            return Err(mismatch("replicas", header.replicas, header.network.replicas));
        }
        expect.check(&header)?;
        let mut net: Network<f32> = Network::new(header.network.clone(), schedule, 0)?;
        if net.param_count() != header.param_count {
            return Err(mismatch("param_count", header.param_count, net.param_count()));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 4 * header.param_count {
            return Err(Error::format(
                path,
                format!("expected {} parameter bytes, found {}", 4 * header.param_count, bytes.len()),
            ));
        }
        for (p, c) in net.params_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *p = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(ScoreNetwork::from_parts(net, header.patch_size, header.seed))
    }
}
