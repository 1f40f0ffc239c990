use layerforge::corpus::{self, EmbeddingStore, Granularity, Records};
use layerforge::synth::{self, SynthSpec, TokenDistribution};
use layerforge::{build_design, pool_user, validate_corpus, LayerSet};

fn small(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(6, 4, 5)
        .with_signal(2, 1.0)
        .with_noise(0.1)
        .with_seed(seed);
    s.messages_per_user = (3, 6);
    s.tokens_per_message = (5, 20);
    s
}

#[test]
fn pooled_vector_is_the_mean_of_raw_tokens() {
    for granularity in [Granularity::User, Granularity::Message] {
        let mut spec = small(4);
        spec.keep_tokens = true;
        spec.granularity = granularity;
        let out = synth::generate(&spec).unwrap();
        let tokens = out.tokens.as_ref().unwrap();
        let h = spec.hidden_dim;
        for (u, raw) in out.corpus.users.iter().zip(tokens) {
            assert_eq!(u.user_id, raw.user_id);
            let all: Vec<&Vec<f64>> = raw.messages.iter().flatten().collect();
            assert_eq!(all.len() as u64, u.total_token_count);
            for layer in 1..=spec.num_layers {
                let got = pool_user(u, layer, h).unwrap();
                for j in 0..h {
                    let idx = (layer - 1) * h + j;
                    let want = all.iter().map(|t| t[idx]).sum::<f64>() / all.len() as f64;
                    assert!((got[j] - want).abs() <= 1e-4 * want.abs().max(1.0), "{got:?} vs {want}");
                }
            }
        }
    }
}

#[test]
fn message_records_fold_to_user_sums() {
    let mut spec = small(9);
    spec.granularity = Granularity::Message;
    let out = synth::generate(&spec).unwrap();
    let Records::Messages(msgs) = &out.store.records else {
        panic!("expected message records")
    };
    let lh = spec.num_layers * spec.hidden_dim;
    for (m, u) in msgs.iter().zip(out.store.user_embeddings()) {
        let mut sums = vec![0f32; lh];
        let mut count = 0;
        for msg in &m.messages {
            count += msg.token_count;
            for (s, v) in sums.iter_mut().zip(&msg.layer_sums) {
                *s += v;
            }
        }
        assert_eq!(u.total_token_count, count);
        assert_eq!(u.layer_sums, sums);
    }
}

#[test]
fn design_matrix_concatenates_in_layer_set_order() {
    let out = synth::generate(&small(1)).unwrap();
    let ls: LayerSet = "3;1".parse().unwrap();
    let d = build_design(&out.corpus, &ls).unwrap();
    assert_eq!(d.ncols(), 2 * 5);
    for (i, pooled) in out.truth.pooled.iter().enumerate() {
        for (j, (a, b)) in pooled[2].iter().zip(&pooled[0]).enumerate() {
            assert_eq!(d.x[(i, j)], *a);
            assert_eq!(d.x[(i, 5 + j)], *b);
        }
    }
}

#[test]
fn outcomes_are_signal_plus_noise_from_stored_vectors() {
    let spec = small(2);
    let out = synth::generate(&spec).unwrap();
    let d = build_design(&out.corpus, &LayerSet::single(2).unwrap()).unwrap();
    for i in 0..d.nrows() {
        let lin: f64 = (0..5).map(|j| d.x[(i, j)] / 5.0).sum();
        assert!((out.truth.signal[i] - lin).abs() < 1e-12);
        assert_eq!(d.y[i], out.truth.signal[i] + out.truth.noise[i]);
    }
}

#[test]
fn every_generated_corpus_is_valid() {
    for (i, dist) in [
        TokenDistribution::GaussianIid,
        TokenDistribution::LayerwiseShift { rho: 0.8 },
    ]
    .into_iter()
    .enumerate()
    {
        for g in [Granularity::User, Granularity::Message] {
            let mut spec = small(i as u64);
            spec.distribution = dist;
            spec.granularity = g;
            let out = synth::generate(&spec).unwrap();
            assert!(validate_corpus(&out.corpus).is_empty());
        }
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = synth::generate(&small(5)).unwrap().store.to_bytes();
    let b = synth::generate(&small(5)).unwrap().store.to_bytes();
    let c = synth::generate(&small(6)).unwrap().store.to_bytes();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn store_bytes_survive_read_and_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    for g in [Granularity::User, Granularity::Message] {
        let mut spec = small(3);
        spec.granularity = g;
        let out = synth::generate(&spec).unwrap();
        let paths = synth::write_output(&out, &spec, dir.path(), &format!("{g}")).unwrap();
        let original = std::fs::read(&paths.embeddings).unwrap();
        let store = EmbeddingStore::read(&paths.embeddings).unwrap();
        assert_eq!(store.to_bytes(), original);
        let c = corpus::load_corpus(&paths.embeddings, &paths.outcomes, 0).unwrap();
        assert_eq!(c.users, out.corpus.users);
    }
}

#[test]
fn corpus_write_read_write_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth::generate(&small(8)).unwrap();
    let first = dir.path().join("a.ule");
    let back = corpus::roundtrip(&out.corpus, &first).unwrap();
    let second = dir.path().join("b.ule");
    corpus::roundtrip(&back, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(
        std::fs::read(corpus::outcomes_path_for(&first)).unwrap(),
        std::fs::read(corpus::outcomes_path_for(&second)).unwrap()
    );
}

#[test]
fn variance_of_y_matches_signal_plus_noise() {
    // One fixed seed per size; the 5% band is about 1.6 standard errors
    // of the variance estimate at n=2000.
    for (n, seed) in [(2000, 0), (8000, 1)] {
        let spec = SynthSpec::new(n, 4, 8)
            .with_signal(2, 1.0)
            .with_signal(4, 0.5)
            .with_noise(0.5)
            .with_seed(seed);
        let out = synth::generate(&spec).unwrap();
        let y = out.corpus.targets();
        let m = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = out.truth.signal_variance + out.truth.bayes_mse;
        assert!((var / want - 1.0).abs() < 0.05, "n={n}: {var} vs {want}");
    }
}
