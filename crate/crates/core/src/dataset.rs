//! Annotations, dataset manifests, and dataset preparation: frame sampling,
//! single-class label unification, and seeded splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::BoundingBox;

/// Accepted raw range for normalized coordinates before clipping.
const RAW_RANGE: std::ops::RangeInclusive<f64> = -0.5..=1.5;

/// Class-labelled box in normalized center format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Annotation {
            class_id,
            cx,
            cy,
            w,
            h,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.cx, self.cy, self.w, self.h)
    }

    /// Clips the box extent to the unit square.
    pub fn clipped(self) -> Self {
        let inside = |c: f64, e: f64| c - e / 2.0 >= 0.0 && c + e / 2.0 <= 1.0;
        if inside(self.cx, self.w) && inside(self.cy, self.h) {
            return self;
        }
        let x0 = (self.cx - self.w / 2.0).clamp(0.0, 1.0);
        let x1 = (self.cx + self.w / 2.0).clamp(0.0, 1.0);
        let y0 = (self.cy - self.h / 2.0).clamp(0.0, 1.0);
        let y1 = (self.cy + self.h / 2.0).clamp(0.0, 1.0);
        Annotation {
            class_id: self.class_id,
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.class_id, self.cx, self.cy, self.w, self.h
        )
    }
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id = fields[0]
            .parse::<u32>()
            .map_err(|_| err(format!("invalid class id {:?}", fields[0])))?;
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f
                .parse::<f64>()
                .map_err(|_| err(format!("non-numeric field {f:?}")))?;
            if !RAW_RANGE.contains(v) {
                return Err(err(format!("value {v} outside [-0.5, 1.5]")));
            }
        }
        let [cx, cy, w, h] = vals;
        out.push(Annotation::new(class_id, cx, cy, w, h).clipped());
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(annotations: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = annotations.iter().map(|a| format!("{a}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps every class to the single class 0.
pub fn unify_labels(annotations: &[Annotation]) -> Vec<Annotation> {
    annotations
        .iter()
        .map(|a| Annotation { class_id: 0, ..*a })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Val,
    /// Not yet assigned; written as `-`.
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
            Split::Unassigned => "-",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "val" => Ok(Split::Val),
            "-" | "" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image: PathBuf,
    pub annotations: PathBuf,
    pub frame: u64,
    pub split: Split,
}

impl Record {
    /// Source video: the directory holding the frame image.
    pub fn video(&self) -> &Path {
        self.image.parent().unwrap_or(Path::new(""))
    }
}

/// Ordered list of dataset records, one manifest line each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub records: Vec<Record>,
}

impl DatasetIndex {
    pub fn new(records: Vec<Record>) -> Self {
        DatasetIndex { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> DatasetIndex {
        DatasetIndex::new(
            self.records
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
        )
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// Parses `image<TAB>annotations<TAB>frame<TAB>split` lines. Relative paths
    /// are resolved against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: path.into(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!(
                    "expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let frame = fields[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid frame number {:?}", fields[2])))?;
            let split = fields[3].trim().parse().map_err(err)?;
            records.push(Record {
                image: base.join(fields[0]),
                annotations: base.join(fields[1]),
                frame,
                split,
            });
        }
        Ok(DatasetIndex { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, path, base)
    }

    pub fn to_manifest(&self) -> String {
        self.records
            .iter()
            .map(|r| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    r.image.display(),
                    r.annotations.display(),
                    r.frame,
                    r.split
                )
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    /// Every referenced file that does not exist, in manifest order.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        self.records
            .iter()
            .flat_map(|r| [&r.image, &r.annotations])
            .filter(|p| !p.exists())
            .cloned()
            .collect()
    }
}

/// Keeps, per source video, the frames congruent to that video's first
/// annotated frame modulo `stride`.
pub fn sample_frames(index: &DatasetIndex, stride: u64) -> Result<DatasetIndex> {
    if stride == 0 {
        return Err(Error::InvalidArgument("frame stride must be >= 1".into()));
    }
    let mut first: BTreeMap<&Path, u64> = BTreeMap::new();
    for r in &index.records {
        let e = first.entry(r.video()).or_insert(r.frame);
        *e = (*e).min(r.frame);
    }
    Ok(DatasetIndex::new(
        index
            .records
            .iter()
            .filter(|r| (r.frame - first[r.video()]).is_multiple_of(stride))
            .cloned()
            .collect(),
    ))
}

/// Split fractions `(train, test, val)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            test: 0.20,
            val: 0.10,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, test: f64, val: f64) -> Result<Self> {
        let f = SplitFractions { train, test, val };
        if [train, test, val].iter().any(|v| !(0.0..=1.0).contains(v))
            || (train + test + val - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split fractions {train}/{test}/{val} must be in [0,1] and sum to 1"
            )));
        }
        Ok(f)
    }

    /// `(train, test, val)` counts: test and val are floored, train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let test = floor(self.test).min(n);
        let val = floor(self.val).min(n - test);
        (n - test - val, test, val)
    }
}

impl FromStr for SplitFractions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("invalid split fractions {s:?}")))?;
        match parts[..] {
            [a, b, c] => SplitFractions::new(a, b, c),
            _ => Err(Error::InvalidArgument(format!(
                "expected three comma-separated fractions, got {s:?}"
            ))),
        }
    }
}

/// Assigns split tags by a seeded shuffle; record order is preserved.
pub fn split_dataset(index: &DatasetIndex, fractions: SplitFractions, seed: u64) -> DatasetIndex {
    let n = index.len();
    let (train, test, _) = fractions.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut records = index.records.clone();
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < train {
            Split::Train
        } else if rank < train + test {
            Split::Test
        } else {
            Split::Val
        };
    }
    DatasetIndex::new(records)
}
