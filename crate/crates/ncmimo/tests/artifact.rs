use std::path::PathBuf;

use ncmimo::artifact::{ModelArtifact, FORMAT_VERSION};
use ncmimo::core::channel::{sample_block, ChannelConfig};
use ncmimo::core::modem::{DecoderSpec, OperatingPoint};
use ncmimo::core::networks::Family;
use ncmimo::core::training::{train, DecoderConfig, Profile, TrainConfig};
use ncmimo::core::{ComplexMatrix, RngStream};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden(name: &str) -> (String, ModelArtifact) {
    let text = std::fs::read_to_string(data(name)).unwrap();
    let model = ModelArtifact::from_json(&text).unwrap();
    (text, model)
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn golden_files_reserialize_byte_identically() {
    for name in ["golden_pml.json", "golden_resmlp.json"] {
        let (text, model) = golden(name);
        assert_eq!(model.to_json().unwrap(), text, "{name}");
    }
}

#[test]
fn golden_pml_fields() {
    let (_, m) = golden("golden_pml.json");
    assert_eq!((m.op.k, m.op.l, m.op.m, m.op.n), (2, 2, 1, 1));
    assert_eq!(m.decoder, DecoderSpec::Pml { theta: 2.5 });
    assert_eq!(m.meta.lambda, Some(1.0));
    assert_eq!(m.meta.seed, 7);
    assert_eq!(m.meta.iteration, 1750);
    assert_eq!(m.meta.best_val_bler, 0.0061);
    // message 2 is the third row: (-1, -i)
    assert_eq!(m.codebook.words()[2].get(0, 0), (-1.0, 0.0));
    assert_eq!(m.codebook.words()[2].get(0, 1), (0.0, -1.0));
    assert_eq!(m.codebook.average_power(), 1.0);
    assert_eq!(m.codebook.max_mean_entry(), 0.0);
}

/// `theta |sum_t y_t conj(x_t)|^2` for a single antenna pair.
fn correlation_oracle(y: &[(f64, f64)], x: &[(f64, f64)], theta: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (&(yr, yi), &(xr, xi)) in y.iter().zip(x) {
        re += yr * xr + yi * xi;
        im += yi * xr - yr * xi;
    }
    theta * (re * re + im * im)
}

#[test]
fn golden_pml_decodes_noiseless_blocks() {
    let (_, m) = golden("golden_pml.json");
    let cb = &m.codebook;
    let dec = m.decoder.prepare(cb, 0.1).unwrap();
    let gains = [(1.0, 0.0), (0.0, 1.0), (-0.3, 0.7), (2.0, -1.5), (0.01, 0.02)];
    for (j, x) in cb.words().iter().enumerate() {
        for &(hr, hi) in &gains {
            let h = ComplexMatrix::from_pairs(1, 1, &[(hr, hi)]).unwrap();
            let y = h.matmul(x).unwrap();
            let logits = dec.logits(&y, &h).unwrap();
            let yv: Vec<_> = (0..2).map(|t| y.get(0, t)).collect();
            for (i, xi) in cb.words().iter().enumerate() {
                let xv: Vec<_> = (0..2).map(|t| xi.get(0, t)).collect();
                let want = correlation_oracle(&yv, &xv, 2.5);
                assert!((logits[i] - want).abs() <= 1e-12 * want.max(1.0), "{j} {i}");
            }
            // self-correlation 4|h|^2 beats every cross term (at most 2|h|^2)
            assert_eq!(dec.decide(&y, &h).unwrap(), j);
        }
    }
}

/// Eval-mode residual MLP written out by hand.
fn resmlp_oracle(m: &ModelArtifact, x: &[f64]) -> Vec<f64> {
    let DecoderSpec::Nn(net) = &m.decoder else { panic!("not a network") };
    let a = &net.weights.affine;
    let n = &net.weights.norm;
    let affine = |i: usize, v: &[f64]| -> Vec<f64> {
        let w = &a[i].w;
        (0..w.rows()).map(|r| a[i].b.data()[r] + (0..w.cols()).map(|c| w.get(r, c) * v[c]).sum::<f64>()).collect()
    };
    let unit = |j: usize, i: usize, v: &[f64]| -> Vec<f64> {
        let l = &n[j];
        let t: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(f, &z)| {
                let bn =
                    l.gamma.data()[f] * (z - l.running_mean[f]) / (l.running_var[f] + 1e-5).sqrt() + l.beta.data()[f];
                bn.max(0.0)
            })
            .collect();
        affine(i, &t)
    };
    let h0 = affine(0, x);
    let t = unit(1, 2, &unit(0, 1, &h0));
    let h: Vec<f64> = t.iter().zip(&h0).map(|(a, b)| a + b).collect();
    unit(2, 3, &h)
}

#[test]
fn golden_resmlp_matches_hand_forward_pass() {
    let (_, m) = golden("golden_resmlp.json");
    let DecoderSpec::Nn(net) = &m.decoder else { panic!("not a network") };
    assert_eq!(net.arch.family, Family::ResMlp);
    assert_eq!(net.weights.norm[1].running_var, vec![0.5, 2.0]);
    let dec = m.decoder.prepare(&m.codebook, 0.1).unwrap();
    let h = ComplexMatrix::from_pairs(1, 1, &[(1.0, 0.0)]).unwrap();
    let mut picks = [0usize; 2];
    for a in -6..=6 {
        for b in -6..=6 {
            let (re, im) = (0.37 * a as f64, 0.41 * b as f64);
            let y = ComplexMatrix::from_pairs(1, 1, &[(re, im)]).unwrap();
            let logits = dec.logits(&y, &h).unwrap();
            let want = resmlp_oracle(&m, &[re, im]);
            for (g, w) in logits.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
            }
            let d = dec.decide(&y, &h).unwrap();
            assert_eq!(d, first_max(&want));
            picks[d] += 1;
        }
    }
    // the fixture is only useful if both classes occur
    assert!(picks[0] > 0 && picks[1] > 0, "{picks:?}");
}

#[test]
fn future_version_is_rejected() {
    let (text, _) = golden("golden_pml.json");
    let bumped = text.replace(
        &format!("\"format_version\": {FORMAT_VERSION}"),
        &format!("\"format_version\": {}", FORMAT_VERSION + 1),
    );
    assert_ne!(bumped, text);
    let err = ModelArtifact::from_json(&bumped).unwrap_err();
    assert!(err.to_string().contains("newer"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_artifacts_are_rejected() {
    let (text, _) = golden("golden_pml.json");
    for bad in [
        text.replace("\"antenna-major\"", "\"slot-major\""),
        text.replace("\"rows\": 4", "\"rows\": 3"),
        text.replace("\"2.5\"", "\"two and a half\""),
        text.replace("\"2.5\"", "2.5"),
        text.replace("\"seed\": 7", "\"seed\": 7, \"extra\": 1"),
        text.replace("\"format_version\": 1,", ""),
        "[]".into(),
    ] {
        assert!(ModelArtifact::from_json(&bad).is_err(), "{bad}");
    }
}

fn quick(decoder: DecoderConfig, seed: u64) -> TrainConfig {
    let op = OperatingPoint::new(2, 2, 2, 2).unwrap();
    let mut cfg = TrainConfig::new(op, decoder, 12.0, Profile::Desk, seed);
    cfg.batch = 128;
    cfg.max_iterations = 30;
    cfg.eval_interval = 10;
    cfg.validation_size = 500;
    cfg
}

#[test]
fn trained_artifacts_round_trip_decisions_bit_exactly() {
    for dec in [
        DecoderConfig::Pml { lambda: 1.0 },
        DecoderConfig::Nn { family: Family::Mlp, depth: 2, hidden: 16 },
        DecoderConfig::Nn { family: Family::ResMlp, depth: 1, hidden: 16 },
    ] {
        let run = train(&quick(dec, 5)).unwrap();
        let model = ModelArtifact::from_run(&run).unwrap();
        let back = ModelArtifact::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model, "{}", dec.name());
        let cfg = ChannelConfig::from_snr_db(2, 2, 2, 8.0).unwrap();
        let (a, b) = (
            model.decoder.prepare(&model.codebook, cfg.sigma2).unwrap(),
            back.decoder.prepare(&back.codebook, cfg.sigma2).unwrap(),
        );
        let mut rng = RngStream::new(99, 0);
        for t in 0..200 {
            let msg = t % 4;
            let (h, z) = sample_block(&cfg, &mut rng);
            let y = h.matmul(&model.codebook.words()[msg]).unwrap().add(&z).unwrap();
            let (la, lb) = (a.logits(&y, &h).unwrap(), b.logits(&y, &h).unwrap());
            assert!(la.iter().zip(&lb).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

#[test]
fn baselines_cannot_be_saved() {
    let (_, mut m) = golden("golden_pml.json");
    m.decoder = DecoderSpec::ExactMl;
    assert!(m.to_json().is_err());
}
