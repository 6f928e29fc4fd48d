//! Run manifests. The manifest id hashes everything except timestamps, so
//! two runs with identical arguments share an id.

use std::time::{SystemTime, UNIX_EPOCH};

use infsel::losskernels::{Dataset, Task};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// Run seed the dataset was generated for; absent for CSV input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

impl Fingerprint {
    pub fn of(data: &Dataset, seed: Option<u64>) -> Self {
        let mut h = Sha256::new();
        h.update((data.len() as u64).to_le_bytes());
        h.update((data.n_features() as u64).to_le_bytes());
        match data.task() {
            Task::Regression => h.update(b"regression"),
            Task::Classification { classes } => {
                h.update(b"classification");
                h.update((classes as u64).to_le_bytes());
            }
        }
        for v in data.features().as_slice().iter().chain(data.targets()) {
            h.update(v.to_bits().to_le_bytes());
        }
        Self {
            seed,
            rows: data.len(),
            cols: data.n_features(),
            sha256: hex(&h.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub fingerprints: Vec<Fingerprint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub dataset: Option<DatasetInfo>,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Serialize)]
struct Identity<'a> {
    command: &'a str,
    config: &'a serde_json::Value,
    seeds: &'a [u64],
    dataset: &'a Option<DatasetInfo>,
    version: &'a str,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>, dataset: Option<DatasetInfo>) -> Self {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let identity = Identity {
            command,
            config: &config,
            seeds: &seeds,
            dataset: &dataset,
            version: &version,
        };
        let bytes = serde_json::to_vec(&identity).expect("manifest identity serializes");
        let id = hex(&Sha256::digest(&bytes))[..16].to_string();
        let now = now_ms();
        Self {
            id,
            command: command.to_string(),
            config,
            seeds,
            dataset,
            version,
            started_unix_ms: now,
            finished_unix_ms: now,
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix_ms = now_ms();
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use infsel::dataio::{gen_synthetic, SyntheticKind, SyntheticParams};

    #[test]
    fn id_ignores_timestamps_and_tracks_config() {
        let a = RunManifest::new("compare", serde_json::json!({"iters": 5}), vec![0, 1], None);
        std::thread::sleep(std::time::Duration::from_millis(2));
        let b = RunManifest::new("compare", serde_json::json!({"iters": 5}), vec![0, 1], None);
        assert_eq!(a.id, b.id);
        assert_eq!(a.id.len(), 16);
        let c = RunManifest::new("compare", serde_json::json!({"iters": 6}), vec![0, 1], None);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let p = SyntheticParams::default();
        let a = gen_synthetic(SyntheticKind::OutlierRegression, 20, 2, 0, &p).unwrap();
        let b = gen_synthetic(SyntheticKind::OutlierRegression, 20, 2, 1, &p).unwrap();
        assert_eq!(Fingerprint::of(&a, None), Fingerprint::of(&a, None));
        assert_ne!(Fingerprint::of(&a, None).sha256, Fingerprint::of(&b, None).sha256);
        assert_eq!(Fingerprint::of(&a, None).sha256.len(), 64);
    }
}
