use proptest::prelude::*;
use stformer::layers::{apply_stat_updates, Ctx, MaskTape, Mode};
use stformer::tensor::{Graph, RngStream, Tensor};
use stformer::training::{mse_loss, Adam};
use stformer::verify::gradcheck_model_config;
use stformer::{MfccMatrix, ModelConfig, StochasticTransformer};

fn matrix(frames: usize, rng: &mut RngStream) -> MfccMatrix {
    let values = (0..frames * 13).map(|_| 5.0 * rng.normal()).collect();
    MfccMatrix::new(frames, 13, values, 25.0, 10.0).unwrap()
}

fn small_model(seed: u64) -> StochasticTransformer {
    StochasticTransformer::new(ModelConfig {
        seed,
        ..gradcheck_model_config()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inference_is_batch_permutation_equivariant(b in 2usize..6, seed: u64) {
        let model = small_model(seed);
        let mut rng = RngStream::new(seed).derive(1);
        let mats: Vec<MfccMatrix> = (0..b).map(|i| matrix(8 + 3 * i, &mut rng)).collect();
        let mut order: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut order);
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        let permuted: Vec<&MfccMatrix> = order.iter().map(|&i| &mats[i]).collect();
        let y = model.predict(&refs).unwrap();
        let yp = model.predict(&permuted).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert!((yp[k] - y[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn any_length_gives_one_finite_score_per_item(frames in proptest::collection::vec(1usize..60, 1..5), seed: u64) {
        let model = small_model(seed);
        let cfg = model.config().clone();
        let mut rng = RngStream::new(seed).derive(2);
        let mats: Vec<MfccMatrix> = frames.iter().map(|&f| matrix(f, &mut rng)).collect();
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        let input = model.input_tensor(&refs).unwrap();
        prop_assert_eq!(input.shape(), &[frames.len(), cfg.n_patches(), cfg.patch_dim()]);
        let y = model.predict(&refs).unwrap();
        prop_assert_eq!(y.len(), frames.len());
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_train_pass_agrees_with_inference(seed: u64) {
        let mut model = StochasticTransformer::new(ModelConfig {
            seed,
            survival_p: 1.0,
            dropout_rate: 0.0,
            bn_momentum: 1.0,
            ..gradcheck_model_config()
        })
        .unwrap();
        let mut rng = RngStream::new(seed).derive(3);
        let mats: Vec<MfccMatrix> = (0..4).map(|_| matrix(20, &mut rng)).collect();
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        let input = model.input_tensor(&refs).unwrap();

        let (train_out, updates) = {
            let mut g = Graph::new();
            let mut cx = Ctx::new(&mut g, model.params(), Mode::Train, RngStream::new(1));
            let x = cx.graph.constant(input.clone());
            let y = model.forward(&mut cx, x).unwrap();
            (cx.graph.value(y).data().to_vec(), cx.take_stat_updates())
        };
        apply_stat_updates(model.params_mut(), updates).unwrap();
        let infer_out = model.run(&input, Mode::Infer, RngStream::new(2), None).unwrap();
        for (a, b) in train_out.iter().zip(&infer_out) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

/// Loss of a training-mode pass on fixed masks and a fixed rng.
fn loss_and_grads(
    model: &StochasticTransformer,
    input: &Tensor,
    target: &[f64],
    tape: &mut MaskTape,
    seed: u64,
) -> (f64, Vec<(stformer::tensor::ParamId, Tensor)>) {
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, model.params(), Mode::Train, RngStream::new(seed)).with_masks(tape);
    let x = cx.graph.constant(input.clone());
    let y = model.forward(&mut cx, x).unwrap();
    let loss = mse_loss(cx.graph, y, target).unwrap();
    let value = cx.graph.value(loss).item();
    cx.graph.backward(loss).unwrap();
    (value, cx.param_grads())
}

#[test]
fn one_adam_step_lowers_the_loss_on_frozen_masks() {
    let mut failures = Vec::new();
    for trial in 0..20u64 {
        let mut model = small_model(trial);
        let mut rng = RngStream::new(trial).derive(4);
        let mats: Vec<MfccMatrix> = (0..4).map(|_| matrix(24, &mut rng)).collect();
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        let input = model.input_tensor(&refs).unwrap();
        let target: Vec<f64> = (0..4).map(|_| rng.normal()).collect();

        let mut tape = MaskTape::new();
        let (before, grads) = loss_and_grads(&model, &input, &target, &mut tape, trial);
        Adam::new(1e-5, 0.0).step(model.params_mut(), &grads).unwrap();
        tape.rewind();
        let (after, _) = loss_and_grads(&model, &input, &target, &mut tape, trial);
        if after >= before {
            failures.push((trial, before, after));
        }
    }
    assert!(failures.len() <= 1, "loss did not drop: {failures:?}");
}
