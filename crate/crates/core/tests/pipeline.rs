use edgeunet_core::datagen::{gen_sample, SynthSpec};
use edgeunet_core::engine::{fit_head, predict_mask, run_float, run_quant};
use edgeunet_core::metrics::dice;
use edgeunet_core::quant::{calibrate, quantize_weights};
use edgeunet_core::{build_graph, count_params, generate_random_weights, ModelSpec, Tensor};

fn samples(seed: u64, n: u64, side: usize) -> Vec<Tensor> {
    (0..n).map(|i| gen_sample(&SynthSpec::random(seed, i, side, side)).unwrap().image).collect()
}

#[test]
fn small_model_float_and_int8_agree() {
    let spec: ModelSpec = "3/8/Y/1.5".parse().unwrap();
    let graph = build_graph(&spec.with_input_size(64, 64, 3).unwrap()).unwrap();
    let mut w = generate_random_weights(&graph, 3);
    let calib = samples(1, 4, 64);
    fit_head(&graph, &mut w, &calib).unwrap();
    let q = quantize_weights(&graph, &w, &calibrate(&graph, &w, &calib).unwrap()).unwrap();
    q.validate(&graph).unwrap();

    for image in samples(2, 6, 64) {
        let pf = run_float(&graph, &w, &image).unwrap();
        let pq = run_quant(&graph, &q, &image).unwrap();
        assert_eq!(pf.dims(), [1, 64, 64, 1]);
        assert_eq!(pq.dims(), pf.dims());
        assert!(pq.data().iter().all(|p| (0.0..=1.0).contains(p)));
        let mf = predict_mask(&pf, 0.5).unwrap();
        let d = dice(&predict_mask(&pq, 0.5).unwrap(), &mf).unwrap();
        assert!(d > 0.9, "dice {d}");
        assert!(mf.count() > 0 && mf.count() < 64 * 64);
    }
}

#[test]
fn closed_form_count_matches_graph_and_weights() {
    for s in ["2/1/N/1.0", "3/8/Y/1.5", "4/16/N/2.0", "5/24/Y/1.3", "6/40/Y/1.1", "6/64/Y/1.1"] {
        let spec: ModelSpec = s.parse().unwrap();
        let graph = build_graph(&spec).unwrap();
        let total = count_params(&spec).unwrap().total;
        assert_eq!(total, graph.trainable_param_count(), "{s}");
        assert_eq!(total, generate_random_weights(&graph, 0).trainable_scalar_count(), "{s}");
    }
}

#[test]
fn outputs_are_deterministic() {
    let spec: ModelSpec = "2/4/Y/1.0".parse().unwrap();
    let graph = build_graph(&spec.with_input_size(32, 32, 3).unwrap()).unwrap();
    let w = generate_random_weights(&graph, 9);
    let image = &samples(4, 1, 32)[0];
    let a = run_float(&graph, &w, image).unwrap();
    let b = run_float(&graph, &generate_random_weights(&graph, 9), image).unwrap();
    assert_eq!(a, b);
}
