//! End-to-end gradient checks: every architecture/normalizer pairing on
//! a 6-dimensional toy instance must match central finite differences.

use normkit::harness::{generate_task, Dataset, TaskKind, TaskSpec};
use normkit::nets::{softmax_cross_entropy, GruModel, GruNormScope, InitScheme, Mlp};
use normkit::normalizers::NormalizerKind;
use normkit::tensor::Vector;
use normkit::verify::finite_diff_grad;
use rand_chacha::rand_core::SeedableRng;

const CONFIGS: [Option<NormalizerKind>; 4] = [
    None,
    Some(NormalizerKind {
        variant: normkit::normalizers::NormVariant::LayerNorm,
        epsilon: 1e-8,
    }),
    Some(NormalizerKind {
        variant: normkit::normalizers::NormVariant::RmsNorm,
        epsilon: 1e-8,
    }),
    Some(NormalizerKind {
        variant: normkit::normalizers::NormVariant::PRmsNorm { p: 0.25 },
        epsilon: 1e-8,
    }),
];

fn rel_err(analytic: &Vector, fd: &Vector) -> f64 {
    let scale = analytic
        .iter()
        .chain(fd.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(fd.iter())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn toy_sequence(seed: u64) -> (Vec<Vector>, Vec<usize>) {
    let spec = TaskSpec {
        kind: TaskKind::SequenceCopy { len: 4, vocab: 3 },
        seed,
    };
    match generate_task(&spec, 1).unwrap() {
        Dataset::Copy { instances, .. } => {
            let inst = &instances[0];
            (inst.inputs.clone(), inst.symbols.clone())
        }
        _ => unreachable!(),
    }
}

#[test]
fn gru_full_model_matches_finite_differences_for_every_normalizer() {
    let init = InitScheme {
        std: 0.3,
        center: 0.0,
        orthogonal_square: false,
    };
    for (i, norm) in CONFIGS.iter().enumerate() {
        for scope in [GruNormScope::AllGates, GruNormScope::CandidateOnly] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200 + i as u64);
            let model = GruModel::new(3, 6, 3, *norm, scope, &init, &mut rng);
            let (inputs, symbols) = toy_sequence(77 + i as u64);

            let (logits, cache) = model.forward(&inputs).unwrap();
            let mut d_logits = Vec::new();
            for (l, &t) in logits.iter().zip(&symbols) {
                d_logits.push(softmax_cross_entropy(l, t).unwrap().1);
            }
            let analytic = model.backward(&cache, &d_logits).unwrap();

            let model_c = model.clone();
            let inputs_c = inputs.clone();
            let symbols_c = symbols.clone();
            let fd = finite_diff_grad(
                |theta| {
                    let mut m = model_c.clone();
                    m.set_from_flat(theta)?;
                    let (logits, _) = m.forward(&inputs_c)?;
                    let mut loss = 0.0;
                    for (l, &t) in logits.iter().zip(&symbols_c) {
                        loss += softmax_cross_entropy(l, t)?.0;
                    }
                    Ok(loss)
                },
                &model.flatten_params(),
                1e-5,
            )
            .unwrap();
            let err = rel_err(&analytic, &fd);
            assert!(err < 1e-5, "config {norm:?} scope {scope:?}: rel err {err}");
        }
    }
}

#[test]
fn mlp_full_model_matches_finite_differences_for_every_normalizer() {
    let init = InitScheme {
        std: 0.4,
        center: 0.0,
        orthogonal_square: false,
    };
    for (i, norm) in CONFIGS.iter().enumerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(300 + i as u64);
        // Two-layer network on a 6-dimensional toy input.
        let model = Mlp::new(&[6, 6, 3], *norm, &init, &mut rng);
        let x = Vector::from(vec![0.4, -0.8, 1.2, 0.1, -0.3, 0.9]);
        let target = 2usize;

        let (out, caches) = model.forward(&x).unwrap();
        let (_, d_out) = softmax_cross_entropy(&out, target).unwrap();
        let analytic = model.backward(&caches, &d_out).unwrap();

        let model_c = model.clone();
        let fd = finite_diff_grad(
            |theta| {
                let mut m = model_c.clone();
                m.set_from_flat(theta)?;
                let (out, _) = m.forward(&x)?;
                Ok(softmax_cross_entropy(&out, target)?.0)
            },
            &model.flatten_params(),
            1e-5,
        )
        .unwrap();
        let err = rel_err(&analytic, &fd);
        assert!(err < 1e-5, "config {norm:?}: rel err {err}");
    }
}
