use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_sequence, split_point, synth_scene, synth_sequence, write_sequence, DataError, Sequence, SynergyMode};

pub const MANIFEST_FILE: &str = "manifest.json";
const SEQUENCE_EXT: &str = "htpseq";

/// What `generate_dataset` produces. Every sequence is a pure function of
/// `seed`, its split and its index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    /// Frames per sequence.
    pub frames: usize,
    /// Past fraction of each sequence.
    pub split_ratio: f64,
    /// Relative weights of head-leads, hand-leads and neutral sequences.
    pub mode_mix: [u32; 3],
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_count: 512,
            test_count: 128,
            seed: 0,
            frames: 20,
            split_ratio: 0.6,
            mode_mix: [60, 20, 20],
        }
    }
}

impl DatasetSpec {
    /// `(N_p, N_f)`, both at least 2.
    pub fn layout(&self) -> Result<(usize, usize), DataError> {
        let n_past = split_point(self.frames, self.split_ratio)?;
        let n_future = self.frames - n_past;
        if n_past < 2 || n_future < 2 {
            return Err(DataError::InvalidConfig(format!(
                "{} frames at ratio {} give n_past={n_past}, n_future={n_future}; both must be >= 2",
                self.frames, self.split_ratio
            )));
        }
        Ok((n_past, n_future))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.layout()?;
        if self.train_count == 0 || self.test_count == 0 {
            return Err(DataError::InvalidConfig("train and test counts must be positive".into()));
        }
        if self.mode_mix.iter().all(|&w| w == 0) {
            return Err(DataError::InvalidConfig("mode_mix has no positive weight".into()));
        }
        Ok(())
    }
}

/// First 8 bytes (little-endian) of `SHA-256(seed ‖ label ‖ index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub file: String,
    pub mode: SynergyModeTag,
    pub scene_seed: u64,
    pub sequence_seed: u64,
}

/// Serialized name of a [`SynergyMode`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynergyModeTag {
    HeadLeads,
    HandLeads,
    Neutral,
}

impl From<SynergyMode> for SynergyModeTag {
    fn from(m: SynergyMode) -> Self {
        match m {
            SynergyMode::HeadLeads => SynergyModeTag::HeadLeads,
            SynergyMode::HandLeads => SynergyModeTag::HandLeads,
            SynergyMode::Neutral => SynergyModeTag::Neutral,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub n_past: usize,
    pub n_future: usize,
    /// Realized head-leads, hand-leads and neutral counts over both splits.
    pub mode_counts: [usize; 3],
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, split: &str) -> Result<&[ManifestEntry], DataError> {
        match split {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(DataError::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

fn pick_mode(mix: &[u32; 3], draw: u64) -> SynergyMode {
    let total: u64 = mix.iter().map(|&w| w as u64).sum();
    let mut r = draw % total;
    for (m, &w) in SynergyMode::ALL.iter().zip(mix) {
        if r < w as u64 {
            return *m;
        }
        r -= w as u64;
    }
    unreachable!("draw below the total weight")
}

fn entry_for(spec: &DatasetSpec, split: &str, index: usize) -> ManifestEntry {
    let i = index as u64;
    let mode = pick_mode(&spec.mode_mix, derive_seed(spec.seed, &format!("{split}/mode"), i));
    let id = format!("{split}-{index:04}");
    ManifestEntry {
        file: format!("{split}/{id}.{SEQUENCE_EXT}"),
        id,
        mode: mode.into(),
        scene_seed: derive_seed(spec.seed, &format!("{split}/scene"), i),
        sequence_seed: derive_seed(spec.seed, &format!("{split}/sequence"), i),
    }
}

fn mode_of(tag: SynergyModeTag) -> SynergyMode {
    match tag {
        SynergyModeTag::HeadLeads => SynergyMode::HeadLeads,
        SynergyModeTag::HandLeads => SynergyMode::HandLeads,
        SynergyModeTag::Neutral => SynergyMode::Neutral,
    }
}

/// The manifest `generate_dataset` would write, without touching disk.
pub fn plan_dataset(spec: &DatasetSpec) -> Result<Manifest, DataError> {
    spec.validate()?;
    let (n_past, n_future) = spec.layout()?;
    let train: Vec<_> = (0..spec.train_count).map(|i| entry_for(spec, "train", i)).collect();
    let test: Vec<_> = (0..spec.test_count).map(|i| entry_for(spec, "test", i)).collect();
    let mut mode_counts = [0usize; 3];
    for e in train.iter().chain(&test) {
        mode_counts[mode_of(e.mode).tag() as usize] += 1;
    }
    Ok(Manifest {
        spec: spec.clone(),
        n_past,
        n_future,
        mode_counts,
        train,
        test,
    })
}

/// Writes `train/` and `test/` sequence files and the manifest under `root`.
/// The spec is validated before anything is written.
pub fn generate_dataset(spec: &DatasetSpec, root: &Path) -> Result<Manifest, DataError> {
    let manifest = plan_dataset(spec)?;
    for split in ["train", "test"] {
        let dir = root.join(split);
        std::fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    for e in manifest.train.iter().chain(&manifest.test) {
        let seq = build_sequence(&manifest, e)?;
        write_sequence(&seq, &root.join(&e.file))?;
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| DataError::io(&path, e))?;
    Ok(manifest)
}

fn build_sequence(m: &Manifest, e: &ManifestEntry) -> Result<Sequence, DataError> {
    let scene = synth_scene(e.scene_seed);
    let mut seq = synth_sequence(&scene, mode_of(e.mode), m.n_past, m.n_future, e.sequence_seed)?;
    seq.id = e.id.clone();
    Ok(seq)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DataError> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Format {
        path: path.clone(),
        source: super::FormatError::Invalid(format!("manifest: {e}")),
    })
}

/// Reads every sequence of `split` ("train" or "test") in manifest order.
pub fn load_split(root: &Path, split: &str) -> Result<(Manifest, Vec<Sequence>), DataError> {
    let manifest = read_manifest(root)?;
    let mut out = Vec::new();
    for e in manifest.entries(split)? {
        let path: PathBuf = root.join(&e.file);
        let seq = read_sequence(&path)?;
        if seq.id != e.id || seq.n_past != manifest.n_past || seq.n_future != manifest.n_future {
            return Err(DataError::Format {
                path,
                source: super::FormatError::Invalid(format!("sequence does not match manifest entry {}", e.id)),
            });
        }
        out.push(seq);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            train_count: 5,
            test_count: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn derived_seeds_separate_labels_and_indices() {
        let a = derive_seed(1, "train/scene", 0);
        assert_eq!(a, derive_seed(1, "train/scene", 0));
        assert_ne!(a, derive_seed(1, "train/scene", 1));
        assert_ne!(a, derive_seed(1, "test/scene", 0));
        assert_ne!(a, derive_seed(2, "train/scene", 0));
    }

    #[test]
    fn default_spec_is_desk_sized() {
        let m = plan_dataset(&DatasetSpec::default()).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (512, 128));
        assert_eq!((m.n_past, m.n_future), (12, 8));
        assert_eq!(m.mode_counts.iter().sum::<usize>(), 640);
        // 60/20/20 mix within sampling noise
        assert!((330..440).contains(&m.mode_counts[0]), "{:?}", m.mode_counts);
    }

    #[test]
    fn generation_is_byte_identical_and_loads_back() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), a.path()).unwrap();
        generate_dataset(&small(), b.path()).unwrap();
        for e in m.train.iter().chain(&m.test) {
            assert_eq!(
                std::fs::read(a.path().join(&e.file)).unwrap(),
                std::fs::read(b.path().join(&e.file)).unwrap()
            );
        }
        assert_eq!(
            std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        let (back, seqs) = load_split(a.path(), "test").unwrap();
        assert_eq!(back, m);
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[1].id, "test-0001");
    }

    #[test]
    fn invalid_ratio_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let bad = DatasetSpec {
            split_ratio: 1.2,
            ..small()
        };
        assert!(matches!(generate_dataset(&bad, dir.path()), Err(DataError::DegenerateSplit { .. })));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn missing_dataset_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_split(&dir.path().join("nowhere"), "train").unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
    }
}
