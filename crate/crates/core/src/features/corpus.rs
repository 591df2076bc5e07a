//! Directory-of-feature-files corpus handling.
//!
//! Utterances pair across speakers by key: the file stem with the
//! speaker-id prefix (`"{speaker}_"`) stripped. `A_003.vcft` and
//! `B_003.vcft` are parallel versions of utterance `003`.

use std::path::{Path, PathBuf};

use super::{read_features, FeatureError, UtteranceFeatures};

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub key: String,
    pub features: UtteranceFeatures,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.features.speaker_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn by_speaker<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a CorpusEntry> {
        self.entries.iter().filter(move |e| e.features.speaker_id == id)
    }

    /// The parallel utterance of `entry` spoken by `speaker`, if present.
    pub fn paired<'a>(&'a self, entry: &CorpusEntry, speaker: &str) -> Option<&'a CorpusEntry> {
        self.entries
            .iter()
            .find(|e| e.key == entry.key && e.features.speaker_id == speaker)
    }

    pub fn utterances(&self) -> Vec<UtteranceFeatures> {
        self.entries.iter().map(|e| e.features.clone()).collect()
    }

    /// All feature files must agree on the excitation/spectra widths.
    /// Returns `(d_e, d_s)`.
    pub fn check_dims(&self) -> Result<(usize, usize), FeatureError> {
        let first = self.entries.first().ok_or(FeatureError::Empty)?;
        let d_e = first.features.excitation_dim();
        let d_s = first.features.spectra_dim();
        let offenders: Vec<String> = self
            .entries
            .iter()
            .filter(|e| {
                e.features.excitation_dim() != d_e || e.features.spectra_dim() != d_s
            })
            .map(|e| e.path.display().to_string())
            .collect();
        if offenders.is_empty() {
            Ok((d_e, d_s))
        } else {
            Err(FeatureError::DimMismatch(format!(
                "files disagree with ({d_e}, {d_s}): {}",
                offenders.join(", ")
            )))
        }
    }
}

fn pair_key(path: &Path, speaker_id: &str) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_prefix(&format!("{speaker_id}_"))
        .map(str::to_string)
        .unwrap_or(stem)
}

/// Load every `.vcft` file under `dir` (non-recursive), sorted by file
/// name for deterministic ordering.
pub fn load_corpus(dir: &Path) -> Result<Corpus, FeatureError> {
    let read_dir = std::fs::read_dir(dir).map_err(|source| FeatureError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = read_dir
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "vcft"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(FeatureError::Invalid(format!(
            "no .vcft files in {}",
            dir.display()
        )));
    }
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let features = read_features(&path)?;
        let key = pair_key(&path, &features.speaker_id);
        entries.push(CorpusEntry { key, features, path });
    }
    Ok(Corpus { entries })
}
