//! Text formats: TOML instance fixtures, solver reports, golden oracle values
//! and per-iteration trajectory CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Instance, SystemParams};
use crate::oracle::{GridResult, GridSpec};
use crate::solver::{Allocation, SolverReport};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    e: Vec<f64>,
    g_direct: Vec<f64>,
    /// `g_cross[m][n]`: transmitter `m` to receiver `n`.
    g_cross: Vec<Vec<f64>>,
    params: SystemParams,
}

pub fn instance_to_toml(instance: &Instance) -> Result<String> {
    let file = InstanceFile {
        e: instance.e.clone(),
        g_direct: instance.g_direct.clone(),
        g_cross: instance.g_cross.clone(),
        params: instance.params.clone(),
    };
    toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn instance_from_toml(text: &str) -> Result<Instance> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    file.params.validate()?;
    Instance::from_parts(file.params, file.e, file.g_direct, file.g_cross)
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    instance_from_toml(&fs::read_to_string(path)?)
}

pub fn write_instance(path: &Path, instance: &Instance) -> Result<()> {
    fs::write(path, instance_to_toml(instance)?)?;
    Ok(())
}

/// SHA-256 over the little-endian bytes of every number defining the
/// instance, as lowercase hex. Identical draws give identical hashes.
pub fn instance_hash(instance: &Instance) -> String {
    let p = &instance.params;
    let mut h = Sha256::new();
    h.update((p.num_antennas as u64).to_le_bytes());
    h.update((instance.num_pairs() as u64).to_le_bytes());
    for x in [
        p.ps_power,
        p.conversion_eff,
        p.circuit_power,
        p.noise_power,
        p.path_loss_exp,
        p.path_loss_const,
        p.area_side,
        p.max_pair_dist,
        p.bandwidth,
    ] {
        h.update(x.to_le_bytes());
    }
    for x in instance
        .e
        .iter()
        .chain(&instance.g_direct)
        .chain(instance.g_cross.iter().flatten())
    {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    allocation: &'a Allocation,
    report: &'a SolverReport,
}

/// Allocation and report as one TOML document.
pub fn report_to_toml(alloc: &Allocation, report: &SolverReport) -> Result<String> {
    toml::to_string(&ReportFile {
        allocation: alloc,
        report,
    })
    .map_err(|e| Error::Format(e.to_string()))
}

/// One row per Dinkelbach iteration: `outer_iter,q,F,inner_iters`.
pub fn write_trajectory_csv<W: Write>(writer: W, report: &SolverReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["outer_iter", "q", "F", "inner_iters"])?;
    for (k, f) in report.f_values.iter().enumerate() {
        let inner = report.inner.get(k).map_or(0, |r| r.iterations);
        w.write_record([
            k.to_string(),
            report.q_trajectory[k].to_string(),
            f.to_string(),
            inner.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reference value of the grid oracle on a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub instance_hash: String,
    pub grid: GridSpec,
    pub value: f64,
    /// `value.to_bits()` in hex, for exact comparison.
    pub value_bits: String,
    pub tau1: f64,
    pub p: Vec<f64>,
    pub modulus: f64,
}

impl Golden {
    pub fn new(instance: &Instance, grid: &GridSpec, result: &GridResult) -> Self {
        Self {
            instance_hash: instance_hash(instance),
            grid: grid.clone(),
            value: result.value,
            value_bits: format!("{:016x}", result.value.to_bits()),
            tau1: result.tau1,
            p: result.p.clone(),
            modulus: result.modulus,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// True when `other` reproduces this value bit for bit on the same instance and grid.
    pub fn matches(&self, other: &Golden) -> bool {
        self.instance_hash == other.instance_hash
            && self.grid == other.grid
            && self.value_bits == other.value_bits
            && self.value.to_bits() == other.value.to_bits()
    }
}
