//! Labeled depth/intensity samples, the on-disk manifest, train/validation/
//! test splits and a synthetic sample generator.

pub mod pgm;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::imaging::{DepthImage, IntensityImage, Raster};
use crate::letter::Letter;

pub use synthetic::gen_synthetic;

pub const MIN_SIDE: usize = 32;
pub const MAX_SIDE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user_id: String,
    pub letter: Letter,
    pub depth: DepthImage,
    pub intensity: IntensityImage,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        for (what, w, h) in [
            ("depth", self.depth.width(), self.depth.height()),
            ("intensity", self.intensity.width(), self.intensity.height()),
        ] {
            if !(MIN_SIDE..=MAX_SIDE).contains(&w) || !(MIN_SIDE..=MAX_SIDE).contains(&h) {
                return Err(Error::InvalidImage(format!(
                    "{what} image {w}x{h} outside {MIN_SIDE}..={MAX_SIDE} pixels per side"
                )));
            }
        }
        Ok(())
    }
}

/// Anything carrying a (user, letter) label; splits only look at these.
pub trait Labeled {
    fn user(&self) -> &str;
    fn letter(&self) -> Letter;
}

impl Labeled for Sample {
    fn user(&self) -> &str {
        &self.user_id
    }
    fn letter(&self) -> Letter {
        self.letter
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelRow {
    pub user: String,
    pub letter: Letter,
}

impl Labeled for LabelRow {
    fn user(&self) -> &str {
        &self.user
    }
    fn letter(&self) -> Letter {
        self.letter
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub depth_path: String,
    pub intensity_path: String,
    pub user: String,
    pub letter: String,
}

pub const MANIFEST_HEADER: [&str; 4] = ["depth_path", "intensity_path", "user", "letter"];

/// Reads manifest rows. Relative paths are resolved against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Format(format!(
            "manifest header must be {}, found {}",
            MANIFEST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let row: ManifestRow = row.map_err(|e| Error::Format(format!("manifest row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([&r.depth_path, &r.intensity_path, &r.user, &r.letter])?;
    }
    w.flush()?;
    Ok(())
}

/// Samples per (user, letter).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub table: BTreeMap<String, BTreeMap<Letter, usize>>,
}

impl Counts {
    pub fn of<L: Labeled>(items: &[L]) -> Self {
        let mut table: BTreeMap<String, BTreeMap<Letter, usize>> = BTreeMap::new();
        for s in items {
            *table.entry(s.user().to_string()).or_default().entry(s.letter()).or_default() += 1;
        }
        Counts { table }
    }

    pub fn total(&self) -> usize {
        self.table.values().flat_map(|m| m.values()).sum()
    }

    pub fn get(&self, user: &str, letter: Letter) -> usize {
        self.table.get(user).and_then(|m| m.get(&letter)).copied().unwrap_or(0)
    }

    /// Users as rows, letters as columns.
    pub fn render(&self) -> String {
        let mut out = String::from("user");
        for l in Letter::all() {
            out.push_str(&format!("\t{l}"));
        }
        out.push_str("\ttotal\n");
        for (user, m) in &self.table {
            out.push_str(user);
            for l in Letter::all() {
                out.push_str(&format!("\t{}", m.get(&l).copied().unwrap_or(0)));
            }
            out.push_str(&format!("\t{}\n", m.values().sum::<usize>()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub counts: Counts,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A manifest row whose letter parsed and whose files exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedRow {
    /// 1-based position in the manifest.
    pub row: usize,
    pub depth_path: PathBuf,
    pub intensity_path: PathBuf,
    pub user: String,
    pub letter: Letter,
}

impl ResolvedRow {
    pub fn load(&self) -> Result<Sample> {
        let n = self.row;
        let depth = pgm::read_depth(&self.depth_path)
            .context(|| format!("manifest row {n} ({})", self.depth_path.display()))?;
        let intensity = pgm::read_intensity(&self.intensity_path)
            .context(|| format!("manifest row {n} ({})", self.intensity_path.display()))?;
        let sample = Sample {
            user_id: self.user.clone(),
            letter: self.letter,
            depth,
            intensity,
        };
        sample.validate().context(|| format!("manifest row {n}"))?;
        Ok(sample)
    }
}

impl Labeled for ResolvedRow {
    fn user(&self) -> &str {
        &self.user
    }
    fn letter(&self) -> Letter {
        self.letter
    }
}

/// Reads the manifest, resolving paths against its directory and checking
/// letters, duplicates and file existence without decoding any image.
pub fn resolve_manifest(manifest_path: &Path) -> Result<Vec<ResolvedRow>> {
    let rows = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let n = i + 1;
        let letter: Letter = row.letter.parse().map_err(|_| Error::UnknownLetter {
            letter: row.letter.clone(),
            row: Some(n),
        })?;
        let depth_path = resolve(base, &row.depth_path);
        let intensity_path = resolve(base, &row.intensity_path);
        for p in [&depth_path, &intensity_path] {
            if !seen.insert(p.clone()) {
                return Err(Error::Format(format!("manifest row {n}: duplicate path {}", p.display())));
            }
            if !p.is_file() {
                return Err(Error::MissingFile { row: n, path: p.clone() });
            }
        }
        out.push(ResolvedRow {
            row: n,
            depth_path,
            intensity_path,
            user: row.user.clone(),
            letter,
        });
    }
    Ok(out)
}

/// Loads every manifest row in order, decoding and validating both images.
/// Errors name the offending (1-based) row.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let rows = resolve_manifest(manifest_path)?;
    let loaded: Vec<Result<Sample>> = rows.par_iter().map(ResolvedRow::load).collect();
    let samples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    let counts = Counts::of(&samples);
    Ok(Dataset { samples, counts })
}

/// Writes every sample as a PGM pair plus `manifest.csv` under `out_dir`.
/// Returns the manifest path.
pub fn write_dataset(samples: &[Sample], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir.join("depth"))?;
    fs::create_dir_all(out_dir.join("intensity"))?;
    let mut index: BTreeMap<(String, Letter), usize> = BTreeMap::new();
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let k = index.entry((s.user_id.clone(), s.letter)).or_default();
        let name = format!("{}_{}_{:04}.pgm", s.user_id, s.letter, *k);
        *k += 1;
        let depth_rel = format!("depth/{name}");
        let intensity_rel = format!("intensity/{name}");
        pgm::write_depth(&out_dir.join(&depth_rel), &s.depth)?;
        pgm::write_intensity(&out_dir.join(&intensity_rel), &s.intensity)?;
        rows.push(ManifestRow {
            depth_path: depth_rel,
            intensity_path: intensity_rel,
            user: s.user_id.clone(),
            letter: s.letter.to_string(),
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Every user in every set: 1/2 train, 1/4 validation, 1/4 test.
    Allseen,
    /// One user held out as the test set.
    Unseen,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allseen" => Ok(SplitMode::Allseen),
            "unseen" => Ok(SplitMode::Unseen),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Allseen => "allseen",
            SplitMode::Unseen => "unseen",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Held-out user for `unseen`. When absent, commands run every user in
    /// turn.
    pub test_user: Option<String>,
    pub unseen_valid_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Allseen,
            test_user: None,
            unseen_valid_fraction: 0.1,
            rng_seed: 1,
        }
    }
}

/// Index sets into the sample list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

fn strata<L: Labeled>(items: &[L], skip_user: Option<&str>) -> BTreeMap<(String, Letter), Vec<usize>> {
    let mut out: BTreeMap<(String, Letter), Vec<usize>> = BTreeMap::new();
    for (i, s) in items.iter().enumerate() {
        if Some(s.user()) == skip_user {
            continue;
        }
        out.entry((s.user().to_string(), s.letter())).or_default().push(i);
    }
    out
}

/// Validation/test share of a stratum of `n`: `floor((n + 1) / 4)` each, the
/// remainder to train. Every part stays within one sample of its exact
/// fraction.
pub fn allseen_quarter(n: usize) -> usize {
    (n + 1) / 4
}

pub fn split_allseen<L: Labeled>(items: &[L], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for (_, mut idx) in strata(items, None) {
        idx.shuffle(&mut rng);
        let q = allseen_quarter(idx.len());
        split.valid.extend_from_slice(&idx[..q]);
        split.test.extend_from_slice(&idx[q..2 * q]);
        split.train.extend_from_slice(&idx[2 * q..]);
    }
    split
}

/// Holds out every sample of `test_user` (shuffled) as the test set; the
/// other users are split per (user, letter) stratum with `round(n *
/// valid_fraction)` going to validation.
pub fn split_unseen<L: Labeled>(items: &[L], test_user: &str, valid_fraction: f64, seed: u64) -> Result<Split> {
    if !items.iter().any(|s| s.user() == test_user) {
        return Err(Error::UnknownUser(test_user.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        test: items
            .iter()
            .enumerate()
            .filter(|(_, s)| s.user() == test_user)
            .map(|(i, _)| i)
            .collect(),
        ..Split::default()
    };
    split.test.shuffle(&mut rng);
    for (_, mut idx) in strata(items, Some(test_user)) {
        idx.shuffle(&mut rng);
        let v = ((idx.len() as f64 * valid_fraction).round() as usize).min(idx.len());
        split.valid.extend_from_slice(&idx[..v]);
        split.train.extend_from_slice(&idx[v..]);
    }
    Ok(split)
}

pub fn split<L: Labeled>(items: &[L], spec: &SplitSpec) -> Result<Split> {
    match spec.mode {
        SplitMode::Allseen => Ok(split_allseen(items, spec.rng_seed)),
        SplitMode::Unseen => {
            let user = spec
                .test_user
                .as_deref()
                .ok_or_else(|| Error::Config("unseen split needs a test user".into()))?;
            split_unseen(items, user, spec.unseen_valid_fraction, spec.rng_seed)
        }
    }
}

/// Distinct users in sorted order.
pub fn users<L: Labeled>(items: &[L]) -> Vec<String> {
    items
        .iter()
        .map(|s| s.user().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
