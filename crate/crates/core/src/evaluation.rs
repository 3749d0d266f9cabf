//! Image quality metrics, GAR computation, the three evaluation cases and
//! the noise sweep.
//!
//! The PSNR is implemented in two modes. The default keeps the raw sum of
//! squared differences in the denominator; the conventional mode divides
//! by the pixel count first (ordinary PSNR). The two differ by exactly
//! `10*log10(W*H)` dB.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::classifiers::{Family, TrainConfig};
use crate::ensemble::{fuse, train_ensemble, Ensemble, FusionRule, WeightScheme};
use crate::error::{Error, Result};
use crate::imagecore::{add_gaussian_noise, load_image, mean_filter, GrayImage, NoiseSpec};
use crate::surf::DetectorConfig;
use crate::template::{
    angle_dir_name, build_template, ingest_records, scan_dataset, split_indices, FaceTemplate,
    ImageRecord, SplitSpec, TemplateSet,
};

// --- quality metrics ---------------------------------------------------------

fn check_dims(i: &GrayImage, g: &GrayImage) -> Result<()> {
    if i.width() != g.width() || i.height() != g.height() {
        return Err(Error::DimensionsDiffer(
            i.width(),
            i.height(),
            g.width(),
            g.height(),
        ));
    }
    Ok(())
}

fn sum_sq_diff(i: &GrayImage, g: &GrayImage) -> f64 {
    i.data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Mean squared pixel difference, normalized by the pixel count.
pub fn mse(i: &GrayImage, g: &GrayImage) -> Result<f64> {
    check_dims(i, g)?;
    Ok(sum_sq_diff(i, g) / (i.width() * i.height()) as f64)
}

pub fn rmse(i: &GrayImage, g: &GrayImage) -> Result<f64> {
    Ok(mse(i, g)?.sqrt())
}

/// Mean absolute pixel difference.
pub fn mae(i: &GrayImage, g: &GrayImage) -> Result<f64> {
    check_dims(i, g)?;
    let sum: f64 = i
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / (i.width() * i.height()) as f64)
}

/// Percentage fit error: `100 * ||I - G||_F / ||I||_F`.
pub fn pfe(i: &GrayImage, g: &GrayImage) -> Result<f64> {
    check_dims(i, g)?;
    let norm_i: f64 = i.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_i == 0.0 {
        return Err(Error::ZeroNormImage);
    }
    Ok(100.0 * sum_sq_diff(i, g).sqrt() / norm_i)
}

/// `10*log10(sum I^2 / sum (I-G)^2)`; identical images give +infinity.
pub fn snr_db(i: &GrayImage, g: &GrayImage) -> Result<f64> {
    check_dims(i, g)?;
    let denom = sum_sq_diff(i, g);
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    let signal: f64 = i.data().iter().map(|v| v * v).sum();
    Ok(10.0 * (signal / denom).log10())
}

/// Peak SNR with `i_max` as the peak intensity. The default keeps the sum
/// of squared differences in the denominator; `conventional` divides by
/// the pixel count first.
pub fn psnr_db(i: &GrayImage, g: &GrayImage, i_max: f64, conventional: bool) -> Result<f64> {
    check_dims(i, g)?;
    let mut denom = sum_sq_diff(i, g);
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    if conventional {
        denom /= (i.width() * i.height()) as f64;
    }
    Ok(10.0 * (i_max * i_max / denom).log10())
}

#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub pfe_percent: f64,
    pub snr_db: f64,
    pub psnr_db: f64,
}

pub fn compute_metrics(
    i: &GrayImage,
    g: &GrayImage,
    i_max: f64,
    psnr_conventional: bool,
) -> Result<MetricReport> {
    Ok(MetricReport {
        mse: mse(i, g)?,
        rmse: rmse(i, g)?,
        mae: mae(i, g)?,
        pfe_percent: pfe(i, g)?,
        snr_db: snr_db(i, g)?,
        psnr_db: psnr_db(i, g, i_max, psnr_conventional)?,
    })
}

// --- decision log and GAR ----------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecisionRecord {
    pub probe_id: String,
    pub true_class: String,
    pub rule: FusionRule,
    pub family: Family,
    pub predicted: String,
    pub correct: bool,
}

/// Closed-set rank-1 identification rate in percent.
pub fn gar(decisions: &[DecisionRecord]) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::EmptyDecisionLog);
    }
    let correct = decisions.iter().filter(|d| d.correct).count();
    Ok(100.0 * correct as f64 / decisions.len() as f64)
}

pub fn decisions_to_csv(decisions: &[DecisionRecord]) -> String {
    let mut out = String::from("probe_id,true_class,rule,family,predicted,correct\n");
    for d in decisions {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.probe_id,
            d.true_class,
            d.rule.label(),
            d.family.label(),
            d.predicted,
            u8::from(d.correct)
        )
        .unwrap();
    }
    out
}

// --- evaluation cases ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Frontal,
    Multiview,
    Noise,
}

impl CaseKind {
    pub fn label(&self) -> &'static str {
        match self {
            CaseKind::Frontal => "frontal",
            CaseKind::Multiview => "multiview",
            CaseKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalCase {
    pub kind: CaseKind,
    pub view_angles: Vec<i16>,
    pub noise_variances: Vec<f64>,
    /// Mean-filter noisy probes before feature extraction (noise case).
    pub denoise_before_extraction: bool,
    pub filter_k: usize,
}

impl EvalCase {
    pub fn frontal() -> Self {
        EvalCase {
            kind: CaseKind::Frontal,
            view_angles: vec![0],
            noise_variances: Vec::new(),
            denoise_before_extraction: true,
            filter_k: 3,
        }
    }

    pub fn multiview(views: Vec<i16>) -> Self {
        EvalCase {
            kind: CaseKind::Multiview,
            view_angles: views,
            noise_variances: Vec::new(),
            denoise_before_extraction: true,
            filter_k: 3,
        }
    }

    pub fn noise(variances: Vec<f64>, denoise: bool, filter_k: usize) -> Self {
        EvalCase {
            kind: CaseKind::Noise,
            view_angles: vec![0],
            noise_variances: variances,
            denoise_before_extraction: denoise,
            filter_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CaseKind::Frontal => {
                if self.view_angles != [0] {
                    return Err(Error::BadDetectorConfig(
                        "frontal case evaluates the 0 degree view only".into(),
                    ));
                }
            }
            CaseKind::Multiview => {
                if self.view_angles.is_empty() {
                    return Err(Error::NoViews);
                }
            }
            CaseKind::Noise => {
                if self.noise_variances.is_empty() {
                    return Err(Error::NoSigmas);
                }
                for &v in &self.noise_variances {
                    if v < 0.0 {
                        return Err(Error::NegativeVariance(v));
                    }
                    if v > 0.1 {
                        log::warn!("noise variance {v} exceeds the calibrated range [0, 0.1]");
                    }
                }
                if self.filter_k == 0 || self.filter_k % 2 == 0 {
                    return Err(Error::BadFilterWindow(self.filter_k));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReportCell {
    pub view: i16,
    pub sigma: f64,
    pub family: Family,
    pub rule: FusionRule,
    pub gar_percent: f64,
    pub probes: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub database: String,
    pub case: CaseKind,
    pub cells: Vec<ReportCell>,
    pub decisions: Vec<DecisionRecord>,
}

impl EvalReport {
    pub fn cell(&self, view: i16, sigma: f64, family: Family, rule: FusionRule) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.view == view && c.sigma == sigma && c.family == family && c.rule == rule)
    }

    /// Report CSV with fixed 6-decimal formatting, rows in
    /// (view, sigma, family, rule) order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("database,case,view,sigma,family,rule,gar_percent,probes\n");
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{:.6},{},{},{:.6},{}",
                self.database,
                self.case.label(),
                c.view,
                c.sigma,
                c.family.label(),
                c.rule.label(),
                c.gar_percent,
                c.probes
            )
            .unwrap();
        }
        out
    }

    /// Aligned text grid, one block per condition: families as rows, the
    /// four fusion rules as columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut conditions: Vec<(i16, f64)> = Vec::new();
        for c in &self.cells {
            if !conditions.contains(&(c.view, c.sigma)) {
                conditions.push((c.view, c.sigma));
            }
        }
        for (view, sigma) in conditions {
            match self.case {
                CaseKind::Noise => {
                    writeln!(out, "GAR (%) [{}] view {view} sigma {sigma:.3}", self.database)
                        .unwrap()
                }
                _ => writeln!(out, "GAR (%) [{}] view {view}", self.database).unwrap(),
            }
            write!(out, "  {:<8}", "family").unwrap();
            for rule in FusionRule::ALL {
                write!(out, "{:>9}", rule.table_header()).unwrap();
            }
            out.push('\n');
            for family in Family::ALL {
                write!(out, "  {:<8}", family.label()).unwrap();
                for rule in FusionRule::ALL {
                    match self.cell(view, sigma, family, rule) {
                        Some(c) => write!(out, "{:>9.2}", c.gar_percent).unwrap(),
                        None => write!(out, "{:>9}", "-").unwrap(),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Everything `run_case` needs besides the case itself.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub members: usize,
    pub template_k: usize,
    pub weighting: WeightScheme,
    /// Base seed of the per-probe noise streams (noise case).
    pub noise_seed: u64,
    pub database: String,
}

impl RunParams {
    pub fn new(database: &str) -> Self {
        RunParams {
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            members: 5,
            template_k: 4,
            weighting: WeightScheme::Uniform,
            noise_seed: 0,
            database: database.to_string(),
        }
    }
}

fn probe_id(rec: &ImageRecord, sigma: Option<f64>) -> String {
    let base = format!(
        "{}/{}/{:03}",
        rec.subject_id,
        angle_dir_name(rec.view_angle),
        rec.sample_index
    );
    match sigma {
        Some(s) => format!("{base}@sigma={s:.6}"),
        None => base,
    }
}

/// Evaluates every probe of one condition under all families and rules.
fn evaluate_probes(
    ensembles: &[Ensemble],
    probes: &[(String, FaceTemplate)],
) -> Result<Vec<DecisionRecord>> {
    let per_probe: Vec<Result<Vec<DecisionRecord>>> = probes
        .par_iter()
        .map(|(id, template)| {
            let features = template.features_f64();
            let mut records = Vec::with_capacity(ensembles.len() * FusionRule::ALL.len());
            for e in ensembles {
                let scores = e.member_scores(&features)?;
                for rule in FusionRule::ALL {
                    let decision = fuse(&scores, &e.classes, rule, &e.member_weights)?;
                    records.push(DecisionRecord {
                        probe_id: id.clone(),
                        true_class: template.subject_id.clone(),
                        rule,
                        family: e.family,
                        predicted: decision.predicted_class.clone(),
                        correct: decision.predicted_class == template.subject_id,
                    });
                }
            }
            Ok(records)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_probe {
        out.extend(r?);
    }
    Ok(out)
}

/// Noisy probe template: load, inject noise, optionally mean-filter, then
/// re-extract features. Enrollment templates stay clean.
fn noisy_probe_template(
    rec: &ImageRecord,
    sigma: f64,
    seed: u64,
    denoise: bool,
    filter_k: usize,
    k: usize,
    detector: &DetectorConfig,
) -> Result<FaceTemplate> {
    let img = load_image(&rec.path)?;
    let noisy = add_gaussian_noise(&img, &NoiseSpec { variance: sigma, seed })?;
    let probe = if denoise {
        mean_filter(&noisy, filter_k)?
    } else {
        noisy
    };
    let (points, _) = crate::surf::extract(&probe, detector)?;
    build_template(&points, k, &rec.subject_id, rec.view_angle, rec.sample_index)
}

struct ViewEval {
    set: TemplateSet,
    test_idx: Vec<usize>,
    ensembles: Vec<Ensemble>,
}

/// Splits one view's templates and trains the MLP/CLVQ/CRBF ensembles on
/// the clean training side.
fn prepare_view(set: TemplateSet, params: &RunParams) -> Result<ViewEval> {
    let (train_idx, test_idx) = split_indices(&set, &params.split)?;
    let train_set = set.select(&train_idx);
    let ensembles: Vec<Ensemble> = Family::ALL
        .iter()
        .map(|&family| {
            train_ensemble(family, &train_set, &params.train, params.members, params.weighting)
        })
        .collect::<Result<_>>()?;
    Ok(ViewEval {
        set,
        test_idx,
        ensembles,
    })
}

/// Aggregates one condition's decisions into the (family, rule) GAR grid.
fn condition_cells(
    view: i16,
    sigma: f64,
    condition_decisions: &[DecisionRecord],
) -> Result<Vec<ReportCell>> {
    let mut cells = Vec::with_capacity(Family::ALL.len() * FusionRule::ALL.len());
    for family in Family::ALL {
        for rule in FusionRule::ALL {
            let slice: Vec<DecisionRecord> = condition_decisions
                .iter()
                .filter(|d| d.family == family && d.rule == rule)
                .cloned()
                .collect();
            cells.push(ReportCell {
                view,
                sigma,
                family,
                rule,
                gar_percent: gar(&slice)?,
                probes: slice.len(),
            });
        }
    }
    Ok(cells)
}

/// Runs one evaluation case end to end: scan, per-view extraction, split,
/// ensemble training (MLP, CLVQ, CRBF) and probe evaluation under all four
/// fusion rules. For the noise case, noise is injected into probe images
/// only; enrollment stays clean, and sigma 0 reproduces the clean cells
/// bit-exactly (neither noise nor filtering is applied).
pub fn run_case(case: &EvalCase, data_root: &Path, params: &RunParams) -> Result<EvalReport> {
    case.validate()?;
    let records = scan_dataset(data_root)?;

    let missing: Vec<String> = case
        .view_angles
        .iter()
        .filter(|v| !records.iter().any(|r| r.view_angle == **v))
        .map(|v| angle_dir_name(*v))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAngles(missing));
    }

    let mut cells = Vec::new();
    let mut decisions = Vec::new();
    for &view in &case.view_angles {
        let view_records: Vec<ImageRecord> = records
            .iter()
            .filter(|r| r.view_angle == view)
            .cloned()
            .collect();
        let set = ingest_records(&view_records, params.template_k, &params.detector)?;
        let ve = prepare_view(set, params)?;

        let sigmas: Vec<Option<f64>> = match case.kind {
            CaseKind::Noise => case.noise_variances.iter().map(|&s| Some(s)).collect(),
            _ => vec![None],
        };
        for sigma in sigmas {
            let probes: Vec<(String, FaceTemplate)> = match sigma {
                None | Some(0.0) => ve
                    .test_idx
                    .iter()
                    .map(|&i| {
                        (
                            probe_id(&view_records[i], sigma),
                            ve.set.templates[i].clone(),
                        )
                    })
                    .collect(),
                Some(s) => {
                    let results: Vec<Result<FaceTemplate>> = ve
                        .test_idx
                        .par_iter()
                        .map(|&i| {
                            noisy_probe_template(
                                &view_records[i],
                                s,
                                mix_seed(params.noise_seed, s.to_bits(), i as u64),
                                case.denoise_before_extraction,
                                case.filter_k,
                                params.template_k,
                                &params.detector,
                            )
                        })
                        .collect();
                    let mut probes = Vec::with_capacity(results.len());
                    for (&i, res) in ve.test_idx.iter().zip(results) {
                        probes.push((probe_id(&view_records[i], sigma), res?));
                    }
                    probes
                }
            };

            let condition_decisions = evaluate_probes(&ve.ensembles, &probes)?;
            cells.extend(condition_cells(view, sigma.unwrap_or(0.0), &condition_decisions)?);
            decisions.extend(condition_decisions);
        }
    }

    Ok(EvalReport {
        database: params.database.clone(),
        case: case.kind,
        cells,
        decisions,
    })
}

/// Variant of [`run_case`] starting from an already-extracted template set
/// (a persisted artifact). The noise case needs the source images and is
/// rejected here.
pub fn run_case_on_templates(
    case: &EvalCase,
    set: &TemplateSet,
    params: &RunParams,
) -> Result<EvalReport> {
    case.validate()?;
    if case.kind == CaseKind::Noise {
        return Err(Error::BadDetectorConfig(
            "the noise case re-extracts probe features and needs the image dataset".into(),
        ));
    }
    let missing: Vec<String> = case
        .view_angles
        .iter()
        .filter(|v| !set.templates.iter().any(|t| t.view_angle == **v))
        .map(|v| angle_dir_name(*v))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAngles(missing));
    }

    let mut cells = Vec::new();
    let mut decisions = Vec::new();
    for &view in &case.view_angles {
        let ve = prepare_view(set.filter_view(view), params)?;
        let probes: Vec<(String, FaceTemplate)> = ve
            .test_idx
            .iter()
            .map(|&i| {
                let t = &ve.set.templates[i];
                let id = format!(
                    "{}/{}/{:03}",
                    t.subject_id,
                    angle_dir_name(t.view_angle),
                    t.sample_index
                );
                (id, t.clone())
            })
            .collect();
        let condition_decisions = evaluate_probes(&ve.ensembles, &probes)?;
        cells.extend(condition_cells(view, 0.0, &condition_decisions)?);
        decisions.extend(condition_decisions);
    }

    Ok(EvalReport {
        database: params.database.clone(),
        case: case.kind,
        cells,
        decisions,
    })
}

fn mix_seed(root: u64, a: u64, b: u64) -> u64 {
    let mut z = root
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// --- noise sweep ---------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub sigma: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub pfe: f64,
    pub snr_db: f64,
    pub psnr_db: f64,
}

/// For each variance: inject noise into every image, mean-filter, compute
/// all six metrics against the clean original and average over the set.
pub fn noise_sweep(
    images: &[GrayImage],
    variances: &[f64],
    filter_k: usize,
    seed: u64,
    psnr_conventional: bool,
) -> Result<Vec<SweepRow>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("<image set>".into()));
    }
    if variances.is_empty() {
        return Err(Error::NoSigmas);
    }
    if variances.windows(2).any(|w| w[0] > w[1]) || variances[0] < 0.0 {
        return Err(Error::BadSweepVariances);
    }
    if filter_k == 0 || filter_k % 2 == 0 {
        return Err(Error::BadFilterWindow(filter_k));
    }

    let mut rows = Vec::with_capacity(variances.len());
    for (si, &sigma) in variances.iter().enumerate() {
        let metrics: Vec<MetricReport> = images
            .par_iter()
            .enumerate()
            .map(|(ii, img)| {
                let spec = NoiseSpec {
                    variance: sigma,
                    seed: mix_seed(seed, si as u64, ii as u64),
                };
                let noisy = add_gaussian_noise(img, &spec)?;
                let filtered = mean_filter(&noisy, filter_k)?;
                compute_metrics(&filtered, img, 1.0, psnr_conventional)
            })
            .collect::<Result<_>>()?;
        let n = metrics.len() as f64;
        rows.push(SweepRow {
            sigma,
            mse: metrics.iter().map(|m| m.mse).sum::<f64>() / n,
            rmse: metrics.iter().map(|m| m.rmse).sum::<f64>() / n,
            mae: metrics.iter().map(|m| m.mae).sum::<f64>() / n,
            pfe: metrics.iter().map(|m| m.pfe_percent).sum::<f64>() / n,
            snr_db: metrics.iter().map(|m| m.snr_db).sum::<f64>() / n,
            psnr_db: metrics.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("sigma,mse,rmse,mae,pfe,snr_db,psnr_db\n");
    for r in rows {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.sigma, r.mse, r.rmse, r.mae, r.pfe, r.snr_db, r.psnr_db
        )
        .unwrap();
    }
    out
}
