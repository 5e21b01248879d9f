use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::attention::{
    all_axis_attention, channel_attention, channel_attention_tokens, omni_attention, spatial_attention, AAAParams,
    Affinity,
};
use restorer::embedding::{patch_revert, stereo_embed, EmbedWeights, RevertWeights, StereoEmbedConfig};
use restorer::gradcheck::{check_gradients, random_projection, GradCheck};
use restorer::{Bindings, ParamStore, Tape, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn store(dim: usize, heads: usize, affinity: Affinity, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    AAAParams::init(&mut s, "a", dim, heads, affinity, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    AAAParams::init(&mut s, "c", dim, heads, affinity, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
    s
}

/// Plain-loop `x · w` for `[n, d] · [d, d]`.
fn project(x: &Tensor, w: &Tensor) -> Vec<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| xd[i * d + k] * wd[k * d + j]).sum();
        }
    }
    out
}

fn rows_stochastic(w: &Tensor) -> bool {
    let n = *w.shape().last().unwrap();
    w.data().chunks(n).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|&v| v >= 0.0))
}

#[test]
fn negative_affinity_ranks_keys_in_reverse_similarity() {
    let (n, d, h) = (8, 16, 2);
    let dh = d / h;
    let s = store(d, h, Affinity::Negative, 1);
    let tokens = randn(&[n, d], 2);
    let prompt = randn(&[n, d], 3);
    let tape = Tape::no_grad();
    let p = AAAParams::bind(&s.bind(&tape), "a", h).unwrap();
    let a = all_axis_attention(&tape, tape.constant(&tokens), tape.constant(&prompt), &p, Affinity::Negative).unwrap();
    let w = tape.value(a.weights);

    let q = project(&prompt, s.get("a.w_q").unwrap());
    let k = project(&tokens, s.get("a.w_k").unwrap());
    for head in 0..h {
        for i in 0..n {
            let sim: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i * d + head * dh + c] * k[j * d + head * dh + c]).sum())
                .collect();
            let row = &w.data()[(head * n + i) * n..(head * n + i + 1) * n];
            let mut by_sim: Vec<usize> = (0..n).collect();
            by_sim.sort_by(|&a, &b| sim[a].total_cmp(&sim[b]));
            let mut by_weight: Vec<usize> = (0..n).collect();
            by_weight.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            assert_eq!(by_sim, by_weight, "head {head} row {i}");
            let top = by_sim[n - 1];
            assert!(row.iter().all(|&v| v >= row[top]));
        }
    }
}

#[test]
fn all_variants_are_row_stochastic_and_preserve_shape() {
    let (n, d, h) = (6, 8, 2);
    for affinity in Affinity::ALL {
        let s = store(d, h, affinity, 4);
        let tape = Tape::no_grad();
        let b = s.bind(&tape);
        let (pa, pc) = (AAAParams::bind(&b, "a", h).unwrap(), AAAParams::bind(&b, "c", h).unwrap());
        let x = tape.constant(&randn(&[n, d], 5));
        let t = tape.constant(&randn(&[n, d], 6));
        let outs = [
            all_axis_attention(&tape, x, t, &pa, affinity).unwrap(),
            spatial_attention(&tape, x, &pa, affinity).unwrap(),
            channel_attention_tokens(&tape, x, &pa, affinity).unwrap(),
            omni_attention(&tape, x, &pa, &pc, affinity).unwrap(),
        ];
        for a in outs {
            assert_eq!(tape.shape(a.out), vec![n, d]);
            assert!(rows_stochastic(&tape.value(a.weights)), "{affinity}");
        }
    }
}

#[test]
fn single_channel_attention_is_identity_weight() {
    let s = store(1, 1, Affinity::Vanilla, 7);
    let tape = Tape::no_grad();
    let p = AAAParams::bind(&s.bind(&tape), "a", 1).unwrap();
    let f = tape.constant(&randn(&[1, 9], 8));
    let a = channel_attention(&tape, f, &p, Affinity::Vanilla).unwrap();
    assert_eq!(tape.value(a.weights).data(), &[1.0]);
    assert_eq!(tape.shape(a.out), vec![1, 9]);
}

#[test]
fn zero_scores_average_channels_uniformly() {
    let s = store(4, 2, Affinity::Vanilla, 9);
    let tape = Tape::no_grad();
    let mut p = AAAParams::bind(&s.bind(&tape), "a", 2).unwrap();
    p.w_q = tape.constant(&Tensor::zeros([4, 4]).unwrap());
    let a = channel_attention_tokens(&tape, tape.constant(&randn(&[5, 4], 10)), &p, Affinity::Vanilla).unwrap();
    assert!(tape.value(a.weights).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn omni_equals_spatial_then_channel() {
    let s = store(8, 2, Affinity::Vanilla, 11);
    let x = randn(&[5, 8], 12);
    let tape = Tape::no_grad();
    let b = s.bind(&tape);
    let (pa, pc) = (AAAParams::bind(&b, "a", 2).unwrap(), AAAParams::bind(&b, "c", 2).unwrap());
    let omni = tape.value(omni_attention(&tape, tape.constant(&x), &pa, &pc, Affinity::Vanilla).unwrap().out);

    // sequential composition on separate tapes
    let t1 = Tape::no_grad();
    let b1 = s.bind(&t1);
    let mid = spatial_attention(&t1, t1.constant(&x), &AAAParams::bind(&b1, "a", 2).unwrap(), Affinity::Vanilla).unwrap();
    let mid = t1.value(mid.out);
    let t2 = Tape::no_grad();
    let b2 = s.bind(&t2);
    let fin = channel_attention_tokens(&t2, t2.constant(&mid), &AAAParams::bind(&b2, "c", 2).unwrap(), Affinity::Vanilla)
        .unwrap();
    assert!(t2.value(fin.out).bit_eq(&omni));
}

fn aaa_gradcheck(affinity: Affinity) -> f64 {
    let (n, d, h) = (4, 6, 2);
    let s = store(d, h, affinity, 13);
    let names: Vec<String> = s.names().filter(|n| n.starts_with("a.")).map(String::from).collect();
    let mut inputs = vec![randn(&[n, d], 14), randn(&[n, d], 15)];
    inputs.extend(names.iter().map(|k| s.get(k).unwrap().clone()));
    check_gradients(
        |tape, v| {
            let mut b = Bindings::default();
            for (k, &var) in names.iter().zip(&v[2..]) {
                b.insert(k.clone(), var);
            }
            let p = AAAParams::bind(&b, "a", h)?;
            let a = all_axis_attention(tape, v[0], v[1], &p, affinity)?;
            random_projection(tape, a.out, 16)
        },
        &inputs,
        &GradCheck::default(),
    )
    .unwrap()
    .max_rel_error
}

#[test]
fn all_axis_attention_gradients() {
    for affinity in Affinity::ALL {
        let err = aaa_gradcheck(affinity);
        assert!(err < 1e-4, "{affinity}: {err}");
    }
}

#[test]
fn baseline_attention_gradients() {
    let (n, d, h) = (5, 4, 2);
    let s = store(d, h, Affinity::Vanilla, 17);
    let names: Vec<String> = s.names().map(String::from).collect();
    let mut inputs = vec![randn(&[n, d], 18)];
    inputs.extend(names.iter().map(|k| s.get(k).unwrap().clone()));
    let report = check_gradients(
        |tape, v| {
            let mut b = Bindings::default();
            for (k, &var) in names.iter().zip(&v[1..]) {
                b.insert(k.clone(), var);
            }
            let (pa, pc) = (AAAParams::bind(&b, "a", h)?, AAAParams::bind(&b, "c", h)?);
            let o = omni_attention(tape, v[0], &pa, &pc, Affinity::Vanilla)?;
            let c = channel_attention(tape, tape.transpose(o.out)?, &pc, Affinity::Vanilla)?;
            random_projection(tape, c.out, 19)
        },
        &inputs,
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn stereo_embed_to_attention_pipeline_gradients() {
    let cfg = StereoEmbedConfig::new(2, 2, 4).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(20);
    let mut s = ParamStore::new();
    EmbedWeights::init(&mut s, "e", &cfg, 4, &mut r).unwrap();
    AAAParams::init(&mut s, "a", 4, 2, Affinity::Negative, &mut r).unwrap();
    RevertWeights::init(&mut s, "r", &cfg, &mut r).unwrap();
    let names: Vec<String> = s.names().map(String::from).collect();
    let mut inputs = vec![randn(&[2, 4, 4], 21), randn(&[1, 4], 22)];
    inputs.extend(names.iter().map(|k| s.get(k).unwrap().clone()));
    let report = check_gradients(
        |tape, v| {
            let mut b = Bindings::default();
            for (k, &var) in names.iter().zip(&v[2..]) {
                b.insert(k.clone(), var);
            }
            let seq = stereo_embed(tape, v[0], &cfg, &EmbedWeights::bind(&b, "e")?)?;
            let prompt = tape.repeat_rows(v[1], 4)?;
            let a = all_axis_attention(tape, seq.tokens, prompt, &AAAParams::bind(&b, "a", 2)?, Affinity::Negative)?;
            let mut seq2 = seq;
            seq2.tokens = tape.add(seq.tokens, a.out)?;
            let img = patch_revert(tape, &seq2, 2, &RevertWeights::bind(&b, "r")?)?;
            let loss = tape.mul(img, img)?;
            tape.mean(loss)
        },
        &inputs,
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weight_is_strictly_decreasing_in_similarity(seed in 0u64..10_000, n in 2usize..9) {
        let d = 4;
        let s = store(d, 1, Affinity::Negative, seed);
        let tokens = randn(&[n, d], seed + 100);
        let prompt = randn(&[n, d], seed + 200);
        let tape = Tape::no_grad();
        let p = AAAParams::bind(&s.bind(&tape), "a", 1).unwrap();
        let a = all_axis_attention(&tape, tape.constant(&tokens), tape.constant(&prompt), &p, Affinity::Negative).unwrap();
        let w = tape.value(a.weights);
        let q = project(&prompt, s.get("a.w_q").unwrap());
        let k = project(&tokens, s.get("a.w_k").unwrap());
        for i in 0..n {
            for j1 in 0..n {
                for j2 in 0..n {
                    let s1: f64 = (0..d).map(|c| q[i * d + c] * k[j1 * d + c]).sum();
                    let s2: f64 = (0..d).map(|c| q[i * d + c] * k[j2 * d + c]).sum();
                    if s1 > s2 + 1e-12 {
                        prop_assert!(w.data()[i * n + j1] < w.data()[i * n + j2]);
                    }
                }
            }
        }
        prop_assert!(rows_stochastic(&w));
    }

    #[test]
    fn key_value_co_permutation_leaves_output_unchanged(seed in 0u64..10_000, n in 2usize..7) {
        let d = 4;
        let s = store(d, 2, Affinity::Negative, seed);
        let tokens = randn(&[n, d], seed + 1);
        let prompt = randn(&[n, d], seed + 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1 + (seed as usize) % (n - 1));
        let permuted: Vec<f64> = perm.iter().flat_map(|&j| tokens.data()[j * d..(j + 1) * d].to_vec()).collect();
        let permuted = Tensor::new([n, d], permuted).unwrap();
        let run = |t: &Tensor| {
            let tape = Tape::no_grad();
            let p = AAAParams::bind(&s.bind(&tape), "a", 2).unwrap();
            tape.value(all_axis_attention(&tape, tape.constant(t), tape.constant(&prompt), &p, Affinity::Negative).unwrap().out)
        };
        prop_assert!(run(&tokens).max_abs_diff(&run(&permuted)).unwrap() < 1e-12);
    }
}
