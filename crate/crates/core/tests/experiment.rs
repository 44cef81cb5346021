mod common;

use anb::experiment::{
    parse_results_csv, read_results, run_loaded, run_to_dir, write_results, PlanTag, RESULTS_FILE,
};
use anb::metrics::{evaluate_accuracy, load_dataset};
use anb::report::{charts, render_report};
use anb::{fixtures, Dataset, Design, ExperimentConfig, ExperimentError, ModelGraph};
use common::*;

fn test_set(n: usize) -> Dataset {
    let full = load_dataset(fixture("shapes4_test.and")).unwrap();
    Dataset::new(
        "shapes_small",
        full.images.slice_batch(0, n).unwrap(),
        full.labels[..n].to_vec(),
        full.class_count,
    )
    .unwrap()
}

fn config(design: Design, powers: &[f64], trials: usize, workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        models: vec![],
        dataset: fixture("shapes4_test.and"),
        design,
        powers: powers.to_vec(),
        seed: 17,
        trials,
        output: "unused".into(),
        batch_size: 32,
        workers,
    }
}

#[test]
fn single_layer_sweep_row_count() {
    let model = fixtures::tiny_cnn();
    let cfg = config(Design::SingleLayerSweep, &[1.0, 10.0, 100.0], 3, 1);
    let res = run_loaded(&cfg, &[model.clone()], &test_set(64)).unwrap();
    assert_eq!(res.rows.len(), 1 + 5 * 3 * 3);
    assert_eq!(res.rows[0].plan, PlanTag::Baseline);
    assert!(res.rows[1..].iter().all(|r| r.plan == PlanTag::Single));
    assert_eq!(res.summary.len(), 3);
    assert!(res.meta.complete);
    // Canonical order: layer, then power, then trial.
    let keys: Vec<_> = res.rows[1..].iter().map(|r| (r.layer, r.power_percent.to_bits(), r.trial)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn zero_power_gives_unit_scores() {
    let models = [fixtures::tiny_cnn(), fixtures::tiny_resnet()];
    let cfg = config(Design::SingleLayerSweep, &[0.0], 2, 1);
    let res = run_loaded(&cfg, &models, &test_set(64)).unwrap();
    assert!(res.rows.iter().all(|r| r.normalized_accuracy == 1.0));
    assert!(res.summary.iter().all(|s| s.a_avr == 1.0));
}

#[test]
fn prefix_n_rows_equal_all_rows() {
    let model = fixtures::tiny_resnet();
    let n = model.group_count();
    let ds = test_set(96);
    let powers = [20.0, 100.0];
    let prefix = run_loaded(&config(Design::PrefixSweep, &powers, 3, 1), &[model.clone()], &ds).unwrap();
    let all = run_loaded(&config(Design::AllLayers, &powers, 3, 1), &[model], &ds).unwrap();
    let last: Vec<_> = prefix.rows.iter().filter(|r| r.plan == PlanTag::Prefix && r.layer == n).collect();
    let whole: Vec<_> = all.rows.iter().filter(|r| r.plan == PlanTag::All).collect();
    assert_eq!(last.len(), whole.len());
    for (p, a) in last.iter().zip(&whole) {
        assert_eq!((p.power_percent, p.trial, p.layer), (a.power_percent, a.trial, a.layer));
        assert_eq!(p.accuracy.to_bits(), a.accuracy.to_bits());
    }
}

#[test]
fn run_leaves_input_model_untouched() {
    let model = fixtures::tiny_cnn_deep();
    let digest = model.param_digest();
    let models = [model];
    run_loaded(&config(Design::PrefixSweep, &[60.0], 2, 2), &models, &test_set(32)).unwrap();
    assert_eq!(models[0].param_digest(), digest);
}

#[test]
fn worker_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = test_set(64);
    let models = [fixtures::tiny_cnn(), fixtures::tiny_resnet()];
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let cfg = config(Design::ModelComparison, &[10.0, 60.0], 2, workers);
        let res = run_loaded(&cfg, &models, &ds).unwrap();
        let out = dir.path().join(format!("w{workers}"));
        write_results(&res, &out).unwrap();
        render_report(&res, &out).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "metadata.json")
            .collect();
        files.sort();
        outputs.push(
            files
                .iter()
                .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(outputs[0].len(), 6);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn accuracy_ignores_batch_size() {
    let model = fixtures::tiny_cnn();
    let ds = test_set(100);
    let reference = evaluate_accuracy(&model, &ds, 100).unwrap();
    for batch in [1, 7, 32, 99, 1000] {
        assert_eq!(evaluate_accuracy(&model, &ds, batch).unwrap(), reference, "batch {batch}");
    }
}

#[test]
fn constant_predictor_scores_chance() {
    // Zero weights make every logit zero; ties resolve to class 0, which
    // is one quarter of the balanced labels.
    let mut model = fixtures::tiny_cnn();
    let g = model.group(model.group_count()).unwrap();
    let zeros = model
        .get_params(&g)
        .unwrap()
        .iter()
        .map(|t| anb::Tensor::zeros(t.shape().to_vec()).unwrap())
        .collect();
    model.set_params(&g, zeros).unwrap();
    assert_eq!(evaluate_accuracy(&model, &test_set(64), 16).unwrap(), 0.25);
}

fn sweep_result() -> anb::ExperimentResult {
    let cfg = config(Design::SingleLayerSweep, &anb::experiment::SWEEP_POWERS, 1, 1);
    run_loaded(&cfg, &[fixtures::tiny_cnn()], &test_set(32)).unwrap()
}

#[test]
fn single_layer_chart_has_one_series_per_power() {
    let res = sweep_result();
    let charts = charts(&res).unwrap();
    assert_eq!(charts.len(), 1);
    let (name, chart) = &charts[0];
    assert_eq!(name, "single_layer_tiny_cnn.svg");
    assert_eq!(chart.series.len(), 6);
    assert!(chart.series.iter().all(|s| s.values.len() == 5 && s.values.iter().all(Option::is_some)));
    let svg = chart.to_svg();
    assert_eq!(svg.matches("class=\"series\"").count(), 6);
    assert!(svg.contains("SNR 1.67"));
}

#[test]
fn comparison_chart_has_one_series_per_model() {
    let models = [fixtures::tiny_cnn(), fixtures::tiny_resnet(), fixtures::tiny_cnn_deep()];
    let cfg = config(Design::ModelComparison, &[10.0, 100.0], 1, 1);
    let res = run_loaded(&cfg, &models, &test_set(32)).unwrap();
    let charts = charts(&res).unwrap();
    let (name, chart) = &charts[0];
    assert_eq!(name, "model_comparison.svg");
    assert_eq!(chart.series.len(), 3);
    assert_eq!(charts.len(), 4);
}

#[test]
fn report_rerender_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let res = sweep_result();
    write_results(&res, dir.path()).unwrap();
    let back = read_results(dir.path()).unwrap();
    assert_eq!(back.rows, res.rows);
    assert_eq!(back.summary, res.summary);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    render_report(&res, &a).unwrap();
    render_report(&back, &b).unwrap();
    for f in ["single_layer_tiny_cnn.svg", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn incomplete_result_is_refused_by_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut res = sweep_result();
    res.meta.complete = false;
    write_results(&res, dir.path()).unwrap();
    assert!(dir.path().join("INCOMPLETE").exists());
    let back = read_results(dir.path()).unwrap();
    assert!(!back.meta.complete);
    assert!(matches!(render_report(&back, dir.path().join("r")), Err(ExperimentError::Incomplete(_))));
}

#[test]
fn failing_model_leaves_partial_output() {
    // A model whose clean accuracy is zero has no defined baseline.
    let dir = tempfile::tempdir().unwrap();
    let mut broken: ModelGraph = fixtures::tiny_cnn();
    broken = ModelGraph::new("broken", broken.input_shape().to_vec(), 4, {
        let mut nodes = broken.nodes().to_vec();
        nodes.push(anb::Node::new(anb::LayerKind::Dense, vec![anb::Param::new(
            "weight",
            anb::Tensor::new(vec![4, 4], vec![0.0; 16]).unwrap(),
        ), anb::Param::new("bias", anb::Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 0.0]).unwrap())]));
        nodes
    })
    .unwrap();
    let ds = {
        let full = test_set(64);
        let keep: Vec<usize> = (0..64).filter(|i| full.labels[*i] != 1).collect();
        let side = 64;
        let images: Vec<f32> = keep.iter().flat_map(|&i| full.images.data()[i * side..(i + 1) * side].to_vec()).collect();
        Dataset::new(
            "no_class_one",
            anb::Tensor::new(vec![keep.len(), 1, 8, 8], images).unwrap(),
            keep.iter().map(|&i| full.labels[i]).collect(),
            4,
        )
        .unwrap()
    };
    let models_dir = dir.path().join("in");
    std::fs::create_dir_all(&models_dir).unwrap();
    anb::save_model(&fixtures::tiny_cnn(), models_dir.join("a.anb")).unwrap();
    anb::save_model(&broken, models_dir.join("b.anb")).unwrap();
    anb::save_dataset(&ds, models_dir.join("no_class_one.and")).unwrap();
    let mut cfg = config(Design::AllLayers, &[10.0], 1, 1);
    cfg.models = vec![models_dir.join("a.anb"), models_dir.join("b.anb")];
    cfg.dataset = models_dir.join("no_class_one.and");
    cfg.output = dir.path().join("out");
    let err = run_to_dir(&cfg).unwrap_err();
    assert!(matches!(err, ExperimentError::Interrupted { .. }), "{err}");
    assert!(cfg.output.join("INCOMPLETE").exists());
    let rows = parse_results_csv(&std::fs::read(cfg.output.join(RESULTS_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.model == "tiny_cnn"));
}
