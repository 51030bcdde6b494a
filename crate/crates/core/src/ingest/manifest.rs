use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use super::{BoundingBox, PatchRecord};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Partition> {
        Partition::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub train: Vec<PatchRecord>,
    pub val: Vec<PatchRecord>,
    pub test: Vec<PatchRecord>,
    pub seed: u64,
    pub split_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    /// Share of each class sent to validation.
    pub fraction: f64,
    pub seed: u64,
    /// Split each class separately so class ratios survive the split.
    pub stratified: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            fraction: 0.2,
            seed: 42,
            stratified: true,
        }
    }
}

/// Stratified, seeded train/validation split.
pub fn split_manifest(patches: &[PatchRecord], fraction: f64, seed: u64) -> Result<DatasetManifest> {
    split_manifest_with(
        patches,
        &SplitOptions {
            fraction,
            seed,
            stratified: true,
        },
    )
}

/// Split `patches` into train and validation.
///
/// Each group (a class, or everything when not stratified) is sorted by
/// patch path, shuffled with [`rng::fisher_yates`] seeded by `seed`, and the
/// first `n - round(fraction * n)` records go to train, the rest to val.
pub fn split_manifest_with(patches: &[PatchRecord], opts: &SplitOptions) -> Result<DatasetManifest> {
    if !(opts.fraction > 0.0 && opts.fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {}",
            opts.fraction
        )));
    }
    let mut seen = HashSet::new();
    for p in patches {
        if !seen.insert(&p.patch_path) {
            return Err(Error::InvalidArgument(format!(
                "duplicate patch path {}",
                p.patch_path.display()
            )));
        }
    }
    for label in Label::ALL {
        if !patches.iter().any(|p| p.label == label) {
            return Err(Error::EmptyClass(label.to_string()));
        }
    }

    let groups: Vec<Vec<&PatchRecord>> = if opts.stratified {
        Label::ALL
            .iter()
            .map(|&l| patches.iter().filter(|p| p.label == l).collect())
            .collect()
    } else {
        vec![patches.iter().collect()]
    };

    let mut rng = rng::seeded(opts.seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut group in groups {
        group.sort_by_key(|a| path_key(&a.patch_path));
        rng::fisher_yates(&mut group, &mut rng);
        let n_val = (opts.fraction * group.len() as f64).round() as usize;
        let n_train = group.len() - n_val;
        train.extend(group[..n_train].iter().map(|&r| r.clone()));
        val.extend(group[n_train..].iter().map(|&r| r.clone()));
    }

    Ok(DatasetManifest {
        train,
        val,
        test: Vec::new(),
        seed: opts.seed,
        split_fraction: opts.fraction,
    })
}

fn path_key(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Per-partition, per-label counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCounts(pub BTreeMap<(Partition, Label), usize>);

impl ClassCounts {
    pub fn get(&self, partition: Partition, label: Label) -> usize {
        self.0.get(&(partition, label)).copied().unwrap_or(0)
    }

    pub fn partition_total(&self, partition: Partition) -> usize {
        Label::ALL.iter().map(|&l| self.get(partition, l)).sum()
    }

    pub fn label_total(&self, label: Label) -> usize {
        Partition::ALL.iter().map(|&p| self.get(p, label)).sum()
    }
}

pub fn class_counts(manifest: &DatasetManifest) -> ClassCounts {
    let mut counts = BTreeMap::new();
    for partition in Partition::ALL {
        for label in Label::ALL {
            counts.insert((partition, label), 0);
        }
        for r in manifest.partition(partition) {
            *counts.entry((partition, r.label)).or_insert(0) += 1;
        }
    }
    ClassCounts(counts)
}

const HEADER: &str = "partition\tlabel\tpatch_path\tsource_scene\txmin\tymin\txmax\tymax";

impl DatasetManifest {
    pub fn empty(seed: u64, split_fraction: f64) -> Self {
        DatasetManifest {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed,
            split_fraction,
        }
    }

    pub fn partition(&self, partition: Partition) -> &[PatchRecord] {
        match partition {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn with_test(mut self, test: Vec<PatchRecord>) -> Self {
        self.test = test;
        self
    }

    /// Serialize as a tab-separated table. Patch paths under `base` are
    /// written relative to it.
    pub fn to_tsv(&self, base: &Path) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# split_fraction={}", self.split_fraction);
        out.push_str(HEADER);
        out.push('\n');
        for partition in Partition::ALL {
            for r in self.partition(partition) {
                let patch = relative_path(&r.patch_path, base);
                let scene = relative_path(&r.source_scene, base);
                let b = &r.source_box;
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    partition.as_str(),
                    r.label,
                    patch.display(),
                    scene.display(),
                    b.xmin,
                    b.ymin,
                    b.xmax,
                    b.ymax
                );
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        fs::write(path, self.to_tsv(base)).map_err(|e| Error::io(path, e))
    }

    /// Parse a table written by [`DatasetManifest::to_tsv`]; relative paths
    /// are joined onto `base`.
    pub fn from_tsv(text: &str, base: &Path) -> Result<DatasetManifest> {
        let origin = PathBuf::from("manifest");
        let bad = |msg: String| Error::malformed(&origin, msg);
        let mut m = DatasetManifest::empty(0, 0.2);
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("seed=") {
                    m.seed = v.parse().map_err(|_| bad(format!("bad seed '{v}'")))?;
                } else if let Some(v) = meta.strip_prefix("split_fraction=") {
                    m.split_fraction = v.parse().map_err(|_| bad(format!("bad fraction '{v}'")))?;
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != HEADER {
                    return Err(bad("missing manifest header".into()));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 8 {
                return Err(bad(format!("line {}: expected 8 fields", lineno + 1)));
            }
            let partition =
                Partition::parse(fields[0]).ok_or_else(|| bad(format!("line {}: bad partition", lineno + 1)))?;
            let label: Label = fields[1]
                .parse()
                .map_err(|_| bad(format!("line {}: bad label", lineno + 1)))?;
            let mut c = [0i64; 4];
            for (slot, f) in c.iter_mut().zip(&fields[4..]) {
                *slot = f
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad coordinate", lineno + 1)))?;
            }
            let record = PatchRecord {
                patch_path: normalize_path(&base.join(fields[2])),
                label,
                source_scene: normalize_path(&base.join(fields[3])),
                source_box: BoundingBox {
                    label,
                    xmin: c[0],
                    ymin: c[1],
                    xmax: c[2],
                    ymax: c[3],
                },
            };
            match partition {
                Partition::Train => m.train.push(record),
                Partition::Val => m.val.push(record),
                Partition::Test => m.test.push(record),
            }
        }
        if !header_seen {
            return Err(bad("missing manifest header".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::from_tsv(&text, base)
    }
}

/// `path` expressed relative to `base` (with `..` steps where needed) when
/// both are absolute or both relative; otherwise `path` unchanged.
pub(crate) fn relative_path(path: &Path, base: &Path) -> PathBuf {
    if base.as_os_str().is_empty() || path.is_absolute() != base.is_absolute() {
        return path.to_path_buf();
    }
    let (path, base) = (normalize_path(path), normalize_path(base));
    let p: Vec<Component> = path.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if b[common..].iter().any(|c| matches!(c, Component::ParentDir)) {
        return path;
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c.as_os_str());
    }
    out
}

/// Lexically drop `.` and fold `name/..` pairs.
pub fn normalize_path(path: &Path) -> PathBuf {
    let mut out: Vec<Component> = Vec::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out.iter().map(|c| c.as_os_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn records(healthy: usize, stressed: usize) -> Vec<PatchRecord> {
        let mk = |label: Label, i: usize| PatchRecord {
            patch_path: PathBuf::from(format!("{label}/p{i:05}.png")),
            label,
            source_scene: PathBuf::from(format!("scene{}.jpg", i / 4)),
            source_box: BoundingBox {
                label,
                xmin: 0,
                ymin: 0,
                xmax: 10,
                ymax: 10,
            },
        };
        (0..healthy)
            .map(|i| mk(Label::Healthy, i))
            .chain((0..stressed).map(|i| mk(Label::Stressed, i)))
            .collect()
    }

    #[test]
    fn same_seed_same_manifest() {
        let recs = records(10, 10);
        let a = split_manifest(&recs, 0.2, 42).unwrap();
        let b = split_manifest(&recs, 0.2, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_tsv(Path::new("")), b.to_tsv(Path::new("")));
        let c = split_manifest(&recs, 0.2, 7).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn input_order_does_not_matter() {
        let recs = records(12, 9);
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(
            split_manifest(&recs, 0.25, 3).unwrap(),
            split_manifest(&rev, 0.25, 3).unwrap()
        );
    }

    #[test]
    fn stratified_eighty_twenty() {
        let m = split_manifest(&records(100, 100), 0.2, 42).unwrap();
        let c = class_counts(&m);
        assert_eq!(c.get(Partition::Train, Label::Healthy), 80);
        assert_eq!(c.get(Partition::Train, Label::Stressed), 80);
        assert_eq!(c.get(Partition::Val, Label::Healthy), 20);
        assert_eq!(c.get(Partition::Val, Label::Stressed), 20);
    }

    #[test]
    fn unstratified_split_sizes() {
        let opts = SplitOptions {
            fraction: 0.2,
            seed: 1,
            stratified: false,
        };
        let m = split_manifest_with(&records(30, 70), &opts).unwrap();
        assert_eq!(m.val.len(), 20);
        assert_eq!(m.train.len(), 80);
    }

    #[test]
    fn empty_class_and_bad_fraction() {
        assert!(matches!(
            split_manifest(&records(0, 5), 0.2, 1).unwrap_err(),
            Error::EmptyClass(_)
        ));
        assert!(split_manifest(&records(5, 5), 0.0, 1).is_err());
        assert!(split_manifest(&records(5, 5), 1.0, 1).is_err());
    }

    #[test]
    fn held_out_test_counts() {
        let test = records(401, 734);
        let m = DatasetManifest::empty(42, 0.2).with_test(test);
        let c = class_counts(&m);
        assert_eq!(c.get(Partition::Test, Label::Healthy), 401);
        assert_eq!(c.get(Partition::Test, Label::Stressed), 734);
        assert_eq!(c.partition_total(Partition::Test), 1135);
    }

    #[test]
    fn training_corpus_counts() {
        // class totals survive the split exactly
        let m = split_manifest(&records(8_200, 11_915), 0.2, 42).unwrap();
        let c = class_counts(&m);
        assert_eq!(c.label_total(Label::Stressed), 11_915);
        assert_eq!(c.label_total(Label::Healthy), 8_200);
        assert_eq!(c.get(Partition::Val, Label::Stressed), 2_383);
    }

    #[test]
    fn empty_manifest_counts_zero() {
        let c = class_counts(&DatasetManifest::empty(0, 0.2));
        assert!(c.0.values().all(|&v| v == 0));
        assert_eq!(c.0.len(), 6);
    }

    #[test]
    fn tsv_round_trip() {
        let m = split_manifest(&records(7, 5), 0.3, 9).unwrap().with_test(records(2, 3));
        let text = m.to_tsv(Path::new(""));
        let back = DatasetManifest::from_tsv(&text, Path::new("")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_path(Path::new("/a/b/c.png"), Path::new("/a")),
            PathBuf::from("b/c.png")
        );
        assert_eq!(
            relative_path(Path::new("/a/x/c.png"), Path::new("/a/out")),
            PathBuf::from("../x/c.png")
        );
        assert_eq!(
            relative_path(Path::new("rel.png"), Path::new("/a")),
            PathBuf::from("rel.png")
        );
        assert_eq!(
            normalize_path(Path::new("/a/out/../x/./c.png")),
            PathBuf::from("/a/x/c.png")
        );
    }

    #[test]
    fn scene_paths_survive_round_trip_outside_base() {
        let rec = |p: &str| PatchRecord {
            patch_path: PathBuf::from(format!("/run/out/patches/{p}.png")),
            label: Label::Healthy,
            source_scene: PathBuf::from("/run/corpus/scene.png"),
            source_box: BoundingBox {
                label: Label::Healthy,
                xmin: 0,
                ymin: 0,
                xmax: 2,
                ymax: 2,
            },
        };
        let m = DatasetManifest {
            train: vec![rec("a")],
            val: vec![rec("b")],
            ..DatasetManifest::empty(1, 0.2)
        };
        let text = m.to_tsv(Path::new("/run/out"));
        assert!(text.contains("../corpus/scene.png") && !text.contains("/run/"));
        assert_eq!(DatasetManifest::from_tsv(&text, Path::new("/run/out")).unwrap(), m);
    }
}
