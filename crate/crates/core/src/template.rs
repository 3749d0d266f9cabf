//! Fixed-length per-image feature templates and labeled dataset handling.
//!
//! A template concatenates the descriptors of the K strongest keypoints
//! (response descending, ties by (y, x) ascending) and zero-pads missing
//! slots, so every image maps to a K*128 vector regardless of how many
//! points the detector found.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::load_image;
use crate::surf::{extract, Descriptor128, DetectorConfig, InterestPoint};

pub const DESCRIPTOR_LEN: usize = 128;
const TEMPLATE_MAGIC: &[u8; 5] = b"MVBK1";

/// One enrolled image: subject label, view angle, and the K*128 feature vector.
///
/// Features are stored as `f32`, matching the on-disk format, so an
/// in-memory set and a reloaded one are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTemplate {
    pub subject_id: String,
    /// Degrees in {0, 45, -45, 90, -90}; positive is right.
    pub view_angle: i16,
    pub sample_index: u16,
    pub features: Vec<f32>,
    /// How many keypoints actually filled slots; below K means the
    /// template was zero-padded (degraded input).
    pub keypoint_count: usize,
}

impl FaceTemplate {
    pub fn is_padded(&self, k: usize) -> bool {
        self.keypoint_count < k
    }

    pub fn features_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| f64::from(v)).collect()
    }
}

/// A labeled dataset with a fixed K across all templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub templates: Vec<FaceTemplate>,
    /// Distinct subject labels, sorted; class indices are positions here.
    pub subjects: Vec<String>,
    pub k: usize,
}

impl TemplateSet {
    pub fn feature_len(&self) -> usize {
        self.k * DESCRIPTOR_LEN
    }

    pub fn class_index(&self, subject: &str) -> Option<usize> {
        self.subjects.binary_search_by(|s| s.as_str().cmp(subject)).ok()
    }

    /// Sub-set with the same subject list and K.
    pub fn select(&self, indices: &[usize]) -> TemplateSet {
        TemplateSet {
            templates: indices.iter().map(|&i| self.templates[i].clone()).collect(),
            subjects: self.subjects.clone(),
            k: self.k,
        }
    }

    /// Templates taken at one view angle. The subject list is rebuilt
    /// from the surviving templates, so the view forms its own closed set.
    pub fn filter_view(&self, angle: i16) -> TemplateSet {
        let templates: Vec<FaceTemplate> = self
            .templates
            .iter()
            .filter(|t| t.view_angle == angle)
            .cloned()
            .collect();
        let mut subjects: Vec<String> = templates.iter().map(|t| t.subject_id.clone()).collect();
        subjects.sort();
        subjects.dedup();
        TemplateSet {
            templates,
            subjects,
            k: self.k,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
            stratified: true,
        }
    }
}

/// Descriptor-order comparator shared with the detector: response
/// descending, ties by (y, x) ascending.
fn strength_order(a: &InterestPoint, b: &InterestPoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

/// Concatenates the K strongest descriptors into one fixed-length vector,
/// zero-padding missing slots. An empty keypoint list yields an all-zero
/// template with `keypoint_count` 0.
pub fn build_template(
    points: &[(InterestPoint, Descriptor128)],
    k: usize,
    subject_id: &str,
    view_angle: i16,
    sample_index: u16,
) -> Result<FaceTemplate> {
    if k == 0 {
        return Err(Error::BadTemplateK);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| strength_order(&points[a].0, &points[b].0));
    let used = order.len().min(k);
    let mut features = vec![0.0f32; k * DESCRIPTOR_LEN];
    for (slot, &idx) in order.iter().take(used).enumerate() {
        for (j, &v) in points[idx].1.values.iter().enumerate() {
            features[slot * DESCRIPTOR_LEN + j] = v as f32;
        }
    }
    Ok(FaceTemplate {
        subject_id: subject_id.to_string(),
        view_angle,
        sample_index,
        features,
        keypoint_count: used,
    })
}

pub fn parse_angle_dir(name: &str) -> Result<i16> {
    match name {
        "m90" => Ok(-90),
        "m45" => Ok(-45),
        "0" => Ok(0),
        "p45" => Ok(45),
        "p90" => Ok(90),
        other => Err(Error::BadAngleDir(other.to_string())),
    }
}

pub fn angle_dir_name(angle: i16) -> String {
    if angle < 0 {
        format!("m{}", -angle)
    } else if angle > 0 {
        format!("p{angle}")
    } else {
        "0".to_string()
    }
}

/// One image file in a dataset tree.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub subject_id: String,
    pub view_angle: i16,
    pub sample_index: u16,
    pub path: PathBuf,
}

fn sorted_dir_names(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, entry.path()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Walks `root/<subject>/<angle>/<sample>.pgm|png` in lexicographic order.
/// Malformed angle directories and empty trees are itemized errors;
/// non-image files are ignored.
pub fn scan_dataset(root: &Path) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (subject, subject_path) in sorted_dir_names(root)? {
        if !subject_path.is_dir() {
            continue;
        }
        for (angle_name, angle_path) in sorted_dir_names(&subject_path)? {
            if !angle_path.is_dir() {
                continue;
            }
            let angle = match parse_angle_dir(&angle_name) {
                Ok(a) => a,
                Err(e) => {
                    failures.push(format!("{}: {e}", angle_path.display()));
                    continue;
                }
            };
            let mut sample_index = 0u16;
            for (file, file_path) in sorted_dir_names(&angle_path)? {
                let lower = file.to_ascii_lowercase();
                if !(lower.ends_with(".pgm") || lower.ends_with(".png")) {
                    continue;
                }
                records.push(ImageRecord {
                    subject_id: subject.clone(),
                    view_angle: angle,
                    sample_index,
                    path: file_path,
                });
                sample_index += 1;
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::IngestFailures(failures));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(records)
}

/// Extracts a template from every image under `root`. All-or-nothing: any
/// unreadable image fails the whole ingestion with an itemized error list.
/// Per-image extraction runs in parallel; the assembly order is the sorted
/// path order, so the result is deterministic.
pub fn ingest_dataset(root: &Path, k: usize, cfg: &DetectorConfig) -> Result<TemplateSet> {
    let records = scan_dataset(root)?;
    ingest_records(&records, k, cfg)
}

pub fn ingest_records(
    records: &[ImageRecord],
    k: usize,
    cfg: &DetectorConfig,
) -> Result<TemplateSet> {
    if k == 0 {
        return Err(Error::BadTemplateK);
    }
    cfg.validate()?;
    let results: Vec<Result<FaceTemplate>> = records
        .par_iter()
        .map(|rec| {
            let img = load_image(&rec.path)?;
            let (points, _skipped) = extract(&img, cfg)?;
            build_template(&points, k, &rec.subject_id, rec.view_angle, rec.sample_index)
        })
        .collect();

    let mut templates = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (rec, res) in records.iter().zip(results) {
        match res {
            Ok(t) => templates.push(t),
            Err(e) => failures.push(format!("{}: {e}", rec.path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::IngestFailures(failures));
    }

    let mut subjects: Vec<String> = templates.iter().map(|t| t.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    Ok(TemplateSet {
        templates,
        subjects,
        k,
    })
}

/// Index partition behind [`split`]: per-subject shuffle, floor of the
/// fraction to train, remainder to test with at least one test item.
pub fn split_indices(set: &TemplateSet, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::BadSplitFraction(spec.train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratified {
        for subject in &set.subjects {
            let mut idx: Vec<usize> = set
                .templates
                .iter()
                .enumerate()
                .filter(|(_, t)| &t.subject_id == subject)
                .map(|(i, _)| i)
                .collect();
            if idx.len() < 2 {
                return Err(Error::SubjectTooSmall(subject.clone()));
            }
            idx.shuffle(&mut rng);
            let n_train = (((idx.len() as f64) * spec.train_fraction).floor() as usize)
                .min(idx.len() - 1); // keep at least one test item
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..set.templates.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = (((idx.len() as f64) * spec.train_fraction).floor() as usize)
            .min(idx.len().saturating_sub(1));
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Partitions a set into disjoint train/test subsets.
pub fn split(set: &TemplateSet, spec: &SplitSpec) -> Result<(TemplateSet, TemplateSet)> {
    let (train, test) = split_indices(set, spec)?;
    Ok((set.select(&train), set.select(&test)))
}

// --- persistence -----------------------------------------------------------

fn bad_file(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFileFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Binary template container: magic `MVBK1`, little-endian u32 counts
/// (subjects, templates, K), length-prefixed UTF-8 subject table, then one
/// record per template (subject index u32, angle i16, sample u16,
/// K*128 f32 features).
pub fn save_templates(set: &TemplateSet, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(TEMPLATE_MAGIC);
    out.extend_from_slice(&(set.subjects.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.templates.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.k as u32).to_le_bytes());
    for s in &set.subjects {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    for t in &set.templates {
        let idx = set
            .class_index(&t.subject_id)
            .expect("template subject present in subject list") as u32;
        out.extend_from_slice(&idx.to_le_bytes());
        out.extend_from_slice(&t.view_angle.to_le_bytes());
        out.extend_from_slice(&t.sample_index.to_le_bytes());
        for &f in &t.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad_file(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_templates(path: &Path) -> Result<TemplateSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(5)? != TEMPLATE_MAGIC {
        return Err(bad_file(path, "bad magic (expected MVBK1)"));
    }
    let n_subjects = cur.u32()? as usize;
    let n_templates = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    if k == 0 {
        return Err(bad_file(path, "K must be >= 1"));
    }
    let mut subjects = Vec::with_capacity(n_subjects);
    for _ in 0..n_subjects {
        let len = cur.u32()? as usize;
        let s = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| bad_file(path, "subject label is not UTF-8"))?;
        subjects.push(s.to_string());
    }
    let mut templates = Vec::with_capacity(n_templates);
    for _ in 0..n_templates {
        let idx = cur.u32()? as usize;
        if idx >= subjects.len() {
            return Err(bad_file(path, "subject index out of range"));
        }
        let view_angle = cur.i16()?;
        let sample_index = cur.u16()?;
        let mut features = Vec::with_capacity(k * DESCRIPTOR_LEN);
        for _ in 0..k * DESCRIPTOR_LEN {
            features.push(cur.f32()?);
        }
        // padded slots are exactly zero, real descriptors have unit norm
        let keypoint_count = (0..k)
            .take_while(|&slot| {
                features[slot * DESCRIPTOR_LEN..(slot + 1) * DESCRIPTOR_LEN]
                    .iter()
                    .any(|&v| v != 0.0)
            })
            .count();
        templates.push(FaceTemplate {
            subject_id: subjects[idx].clone(),
            view_angle,
            sample_index,
            features,
            keypoint_count,
        });
    }
    Ok(TemplateSet {
        templates,
        subjects,
        k,
    })
}

/// The template container as CSV for inspection: one row per template,
/// features in 8-significant-digit notation.
pub fn templates_to_csv(set: &TemplateSet) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("subject_id,view_angle,sample_index,keypoint_count");
    for i in 0..set.feature_len() {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for t in &set.templates {
        write!(
            out,
            "{},{},{},{}",
            t.subject_id, t.view_angle, t.sample_index, t.keypoint_count
        )
        .unwrap();
        for &f in &t.features {
            write!(out, ",{}", f).unwrap();
        }
        out.push('\n');
    }
    out
}
