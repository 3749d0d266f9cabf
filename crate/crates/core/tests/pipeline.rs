//! End-to-end pipeline checks on generated data: subject separability,
//! ingestion determinism, and the evaluation cases.

use mvface_core::classifiers::{Family, TrainConfig};
use mvface_core::datagen::generate_dataset;
use mvface_core::ensemble::FusionRule;
use mvface_core::evaluation::{run_case, EvalCase, RunParams};
use mvface_core::surf::DetectorConfig;
use mvface_core::template::{ingest_dataset, SplitSpec, TemplateSet};

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Leave-one-out nearest-template classification accuracy at one view.
fn one_nn_accuracy(set: &TemplateSet, angle: i16) -> f64 {
    let idx: Vec<usize> = (0..set.templates.len())
        .filter(|&i| set.templates[i].view_angle == angle)
        .collect();
    let correct = idx
        .iter()
        .filter(|&&i| {
            let t = &set.templates[i];
            idx.iter()
                .filter(|&&j| j != i)
                .min_by(|&&a, &&b| {
                    dist(&t.features, &set.templates[a].features)
                        .total_cmp(&dist(&t.features, &set.templates[b].features))
                })
                .map(|&j| set.templates[j].subject_id == t.subject_id)
                .unwrap_or(false)
        })
        .count();
    correct as f64 / idx.len() as f64
}

#[test]
fn generated_subjects_are_recoverable_by_nearest_template() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(10, &[0], 6, 4242, dir.path()).unwrap();
    let set = ingest_dataset(dir.path(), 4, &DetectorConfig::default()).unwrap();
    assert_eq!(set.templates.len(), 60);
    assert_eq!(set.subjects.len(), 10);

    let acc = one_nn_accuracy(&set, 0);
    assert!(acc > 0.95, "nearest-template accuracy {acc}");

    for t in &set.templates {
        assert!(t.features.iter().all(|v| v.is_finite()));
    }

    // intra-subject templates sit closer than inter-subject ones
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for (i, a) in set.templates.iter().enumerate() {
        for b in set.templates.iter().skip(i + 1) {
            let d = dist(&a.features, &b.features);
            if a.subject_id == b.subject_id {
                intra = (intra.0 + d, intra.1 + 1);
            } else {
                inter = (inter.0 + d, inter.1 + 1);
            }
        }
    }
    let (intra, inter) = (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64);
    assert!(
        intra < inter,
        "intra-subject distance {intra} not below inter-subject {inter}"
    );
}

#[test]
fn ingestion_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[0, 45], 3, 11, dir.path()).unwrap();
    let cfg = DetectorConfig::default();
    let a = ingest_dataset(dir.path(), 4, &cfg).unwrap();
    let b = ingest_dataset(dir.path(), 4, &cfg).unwrap();
    assert_eq!(a.subjects, b.subjects);
    assert_eq!(a.templates.len(), b.templates.len());
    for (x, y) in a.templates.iter().zip(&b.templates) {
        assert_eq!(x, y);
    }
}

fn small_params(seed: u64) -> RunParams {
    let mut params = RunParams::new("pipeline-test");
    params.train = TrainConfig {
        hidden_units: 16,
        epochs: 30,
        learning_rate: 0.03,
        seed,
    };
    params.split = SplitSpec {
        train_fraction: 0.67,
        seed,
        stratified: true,
    };
    params.members = 2;
    params.template_k = 4;
    params.noise_seed = seed + 1000;
    params
}

#[test]
fn frontal_case_produces_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[0], 6, 77, dir.path()).unwrap();
    let report = run_case(&EvalCase::frontal(), dir.path(), &small_params(5)).unwrap();

    // 3 families x 4 rules at the single view
    assert_eq!(report.cells.len(), 12);
    for family in Family::ALL {
        for rule in FusionRule::ALL {
            let cell = report.cell(0, 0.0, family, rule).expect("cell present");
            assert!((0.0..=100.0).contains(&cell.gar_percent));
            // 4 subjects x 6 samples at 0.67: 4 train, 2 test per subject
            assert_eq!(cell.probes, 8);
        }
    }
    assert_eq!(report.decisions.len(), 8 * 12);

    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "database,case,view,sigma,family,rule,gar_percent,probes"
    );
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("pipeline-test,frontal,0,0.000000,MLP,MV,"));

    let table = report.render_table();
    assert!(table.contains("W.Sum"));
    assert!(table.contains("CLVQ"));
}

#[test]
fn noise_case_at_sigma_zero_reproduces_the_clean_cells() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[0], 6, 78, dir.path()).unwrap();
    let params = small_params(9);
    let clean = run_case(&EvalCase::frontal(), dir.path(), &params).unwrap();
    let noisy = run_case(&EvalCase::noise(vec![0.0, 0.02], true, 3), dir.path(), &params).unwrap();

    assert_eq!(noisy.cells.len(), 24);
    for family in Family::ALL {
        for rule in FusionRule::ALL {
            let a = clean.cell(0, 0.0, family, rule).unwrap();
            let b = noisy.cell(0, 0.0, family, rule).unwrap();
            assert_eq!(a.gar_percent.to_bits(), b.gar_percent.to_bits());
            assert_eq!(a.probes, b.probes);
        }
    }
}

#[test]
fn multiview_case_covers_both_side_views() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[-45, 45], 6, 81, dir.path()).unwrap();
    let report = run_case(
        &EvalCase::multiview(vec![45, -45]),
        dir.path(),
        &small_params(4),
    )
    .unwrap();
    // the frontal grid repeated per view: 3 families x 4 rules x 2 views
    assert_eq!(report.cells.len(), 24);
    for view in [45, -45] {
        for family in Family::ALL {
            for rule in FusionRule::ALL {
                assert!(report.cell(view, 0.0, family, rule).is_some());
            }
        }
    }
}

#[test]
fn multiview_case_requires_the_requested_angles() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[0], 4, 79, dir.path()).unwrap();
    let err = run_case(
        &EvalCase::multiview(vec![45, -45]),
        dir.path(),
        &small_params(3),
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("p45") && msg.contains("m45"), "{msg}");
}

#[test]
fn run_case_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(4, &[0], 5, 80, dir.path()).unwrap();
    let params = small_params(21);
    let a = run_case(&EvalCase::frontal(), dir.path(), &params).unwrap();
    let b = run_case(&EvalCase::frontal(), dir.path(), &params).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(
        mvface_core::evaluation::decisions_to_csv(&a.decisions),
        mvface_core::evaluation::decisions_to_csv(&b.decisions)
    );
}
