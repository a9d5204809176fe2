use std::io::Write;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::auroc;
use crate::numkernel::{finite_diff_check, DiffTensor, Tape};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn small_config(din: usize, hidden: usize) -> SeqConfig {
    SeqConfig {
        in_dim: din,
        hidden,
        attention_dim: 5,
        epochs: 3,
        batch_size: 16,
        seed: 11,
        ..SeqConfig::desk()
    }
}

fn random_seq(t: usize, din: usize, rng: &mut ChaCha8Rng) -> TxSequence {
    TxSequence {
        account: "a".into(),
        steps: (0..t).map(|_| (0..din).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        label: rng.random_bool(0.5),
    }
}

/// Explicit gate-by-gate LSTM over one sequence.
fn lstm_oracle(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hh = p.hidden;
    let din = p.in_dim();
    let (w, u, b) = (p.w.values(), p.u.values(), p.b.values());
    let mut h = vec![0.0; hh];
    let mut c = vec![0.0; hh];
    let mut out = Vec::new();
    for x in xs {
        let pre = |gate: usize, j: usize| {
            let col = gate * hh + j;
            let mut s = b[col];
            for k in 0..din {
                s += x[k] * w[k * 4 * hh + col];
            }
            for k in 0..hh {
                s += h[k] * u[k * 4 * hh + col];
            }
            s
        };
        let mut hn = vec![0.0; hh];
        let mut cn = vec![0.0; hh];
        for j in 0..hh {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            cn[j] = f * c[j] + i * g;
            hn[j] = o * cn[j].tanh();
        }
        h = hn;
        c = cn;
        out.push(h.clone());
    }
    out
}

fn bilstm_oracle(m: &SeqModel, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = lstm_oracle(&m.fwd, xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut b = lstm_oracle(&m.bwd, &rev);
    b.reverse();
    f.into_iter().zip(b).map(|(mut x, y)| {
        x.extend(y);
        x
    }).collect()
}

fn attention_oracle(m: &SeqModel, hs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let a = m.config.attention_dim;
    let width = hs[0].len();
    let scores: Vec<f64> = hs
        .iter()
        .map(|h| {
            (0..a)
                .map(|j| {
                    let pre: f64 = m.att_b.values()[j] + (0..width).map(|k| h[k] * m.att_w.values()[k * a + j]).sum::<f64>();
                    m.att_v.values()[j] * pre.tanh()
                })
                .sum()
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let tot: f64 = e.iter().sum();
    let alpha: Vec<f64> = e.iter().map(|x| x / tot).collect();
    let z = (0..width).map(|k| hs.iter().zip(&alpha).map(|(h, al)| al * h[k]).sum()).collect();
    (alpha, z)
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

#[test]
fn zero_inputs_and_biases_give_zero_states() {
    let m = SeqModel::new(small_config(4, 3)).unwrap();
    let seq = TxSequence {
        account: "z".into(),
        steps: vec![vec![0.0; 4]; 5],
        label: false,
    };
    for h in m.bilstm_forward(&seq).unwrap() {
        assert_eq!(h.len(), 6);
        assert!(h.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn single_step_runs_both_cells_on_the_same_input() {
    let m = SeqModel::new(small_config(4, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = random_seq(1, 4, &mut rng);
    let h = m.bilstm_forward(&seq).unwrap();
    let mut expect = lstm_oracle(&m.fwd, &seq.steps)[0].clone();
    expect.extend(lstm_oracle(&m.bwd, &seq.steps)[0].clone());
    close(&h[0], &expect, 1e-12);
}

#[test]
fn three_steps_match_the_gate_oracle() {
    let mut m = SeqModel::new(small_config(4, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [&mut m.fwd.b, &mut m.bwd.b] {
        t.values_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    let seq = random_seq(3, 4, &mut rng);
    let got = m.bilstm_forward(&seq).unwrap();
    let want = bilstm_oracle(&m, &seq.steps);
    for (g, w) in got.iter().zip(&want) {
        close(g, w, 1e-12);
    }
}

#[test]
fn reversal_swaps_direction_roles() {
    let m = SeqModel::new(small_config(3, 4)).unwrap();
    let mut swapped = m.clone();
    std::mem::swap(&mut swapped.fwd, &mut swapped.bwd);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = random_seq(6, 3, &mut rng);
    let mut rev = seq.clone();
    rev.steps.reverse();
    let a = m.bilstm_forward(&seq).unwrap();
    let b = swapped.bilstm_forward(&rev).unwrap();
    let t = a.len();
    for k in 0..t {
        let (af, ab) = a[k].split_at(4);
        let (bf, bb) = b[t - 1 - k].split_at(4);
        assert_eq!(af, bb);
        assert_eq!(ab, bf);
    }
}

#[test]
fn batched_forward_matches_single_sequences() {
    let m = SeqModel::new(small_config(3, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seqs: Vec<TxSequence> = (0..5).map(|_| random_seq(4, 3, &mut rng)).collect();
    let refs: Vec<&TxSequence> = seqs.iter().collect();
    let batch = m.score_batch(&refs).unwrap();
    for (s, b) in seqs.iter().zip(&batch) {
        let one = m.score_transaction(s).unwrap();
        assert!((one.score - b.score).abs() < 1e-12);
        close(&one.alpha, &b.alpha, 1e-12);
    }
}

#[test]
fn identical_states_give_uniform_attention() {
    let m = SeqModel::new(small_config(3, 2)).unwrap();
    let h = vec![vec![0.3, -0.2, 0.7, 0.1]; 4];
    let (alpha, z) = temporal_attention(&m, &h).unwrap();
    close(&alpha, &[0.25; 4], 1e-15);
    close(&z, &h[0], 1e-15);
    let (alpha, z) = temporal_attention(&m, &h[..1]).unwrap();
    assert_eq!(alpha, vec![1.0]);
    close(&z, &h[0], 1e-15);
}

#[test]
fn attention_matches_direct_evaluation() {
    let m = SeqModel::new(small_config(3, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let (alpha, z) = temporal_attention(&m, &h).unwrap();
    let (ea, ez) = attention_oracle(&m, &h);
    assert!(ea.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3));
    close(&alpha, &ea, 1e-12);
    close(&z, &ez, 1e-12);
}

#[test]
fn readout_examples() {
    let mut m = SeqModel::new(small_config(3, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seq = random_seq(4, 3, &mut rng);
    m.out_w = DiffTensor::zeros_param(vec![4, 1]);
    assert_eq!(m.score_transaction(&seq).unwrap().score, 0.5);
    m.out_b = DiffTensor::param(vec![1], vec![40.0]).unwrap();
    assert!(1.0 - m.score_transaction(&seq).unwrap().score < 1e-9);
}

#[test]
fn score_matches_composed_oracles() {
    let m = SeqModel::new(small_config(3, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = random_seq(5, 3, &mut rng);
    let hs = bilstm_oracle(&m, &seq.steps);
    let (alpha, z) = attention_oracle(&m, &hs);
    let logit: f64 = m.out_b.values()[0] + z.iter().zip(m.out_w.values()).map(|(a, b)| a * b).sum::<f64>();
    let got = m.score_transaction(&seq).unwrap();
    assert!((got.score - sig(logit)).abs() < 1e-12);
    close(&got.alpha, &alpha, 1e-12);
    assert_eq!(got, m.score_transaction(&seq).unwrap());
}

#[test]
fn mismatched_widths_are_shape_errors() {
    let m = SeqModel::new(small_config(3, 2)).unwrap();
    let bad = TxSequence {
        account: "b".into(),
        steps: vec![vec![0.0; 4]; 2],
        label: false,
    };
    assert!(matches!(m.score_transaction(&bad), Err(crate::ScafdsError::Shape(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (random_seq(2, 3, &mut rng), random_seq(3, 3, &mut rng));
    assert!(matches!(m.score_batch(&[&a, &b]), Err(crate::ScafdsError::Shape(_))));
}

#[test]
fn stage4_gradients_match_finite_differences() {
    let m = SeqModel::new(SeqConfig {
        attention_dim: 8,
        ..small_config(3, 8)
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data: Vec<TxSequence> = (0..4).map(|_| random_seq(4, 3, &mut rng)).collect();
    data[0].label = true;
    data[1].label = false;
    let mut m = m;
    for t in m.tensors_mut() {
        t.values_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.1..0.1));
    }
    let refs: Vec<&TxSequence> = data.iter().collect();
    let leaves: Vec<DiffTensor> = m.tensors().into_iter().cloned().collect();
    let report = finite_diff_check(
        |tape: &mut Tape, vars| {
            let v = m.vars_from_list(vars)?;
            stage4_loss_tape(&m, tape, &v, &refs)
        },
        &leaves,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "max relative error {}", report.max_rel_error);
}

#[test]
fn zero_epochs_is_identity() {
    let mut m = SeqModel::new(SeqConfig {
        epochs: 0,
        ..small_config(CHANNELS, 4)
    })
    .unwrap();
    let before = m.clone();
    let data = planted_sequences(&PlantedConfig {
        n_sequences: 10,
        ..PlantedConfig::default()
    });
    assert!(train_stage4(&mut m, &data).unwrap().is_empty());
    assert_eq!(m, before);
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = planted_sequences(&PlantedConfig {
        n_sequences: 40,
        seq_len: 8,
        ..PlantedConfig::default()
    });
    let run = || {
        let mut m = SeqModel::new(small_config(CHANNELS, 4)).unwrap();
        let curve = train_stage4(&mut m, &data).unwrap();
        (m, curve)
    };
    assert_eq!(run(), run());
}

#[test]
fn planted_pattern_is_learned() {
    let gen = |seed, n| {
        planted_sequences(&PlantedConfig {
            n_sequences: n,
            seq_len: 16,
            seed,
            ..PlantedConfig::default()
        })
    };
    let (train, test) = (gen(1, 400), gen(2, 200));
    let mut m = SeqModel::new(SeqConfig {
        hidden: 8,
        attention_dim: 8,
        epochs: 30,
        batch_size: 64,
        seed: 3,
        ..SeqConfig::desk()
    })
    .unwrap();
    let curve = train_stage4(&mut m, &train).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let refs: Vec<&TxSequence> = test.iter().collect();
    let scores: Vec<f64> = m.score_batch(&refs).unwrap().iter().map(|s| s.score).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.label).collect();
    let auc = auroc(&scores, &labels).unwrap();
    assert!(auc > 0.95, "test AUROC {auc}");
}

fn write_csv(rows: &[String]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
    f
}

fn account_rows(account: &str, n: usize, fraud_at: Option<usize>) -> Vec<String> {
    (0..n)
        .map(|k| {
            let label = u8::from(fraud_at == Some(k));
            format!("{account},{},{}.5,cp{},{},{},geo{},dev{},{}", 1000 - k, k % 7, k % 3, if k % 2 == 0 { "wire" } else { "ach" }, (k % 24) as f64, k % 2, k % 4, label)
        })
        .collect()
}

const HEADER: &str = "account,time,amount,counterparty,tx_type,time_of_day,geo,device,is_fraud";

#[test]
fn windowing_follows_account_length() {
    let mut rows = vec![HEADER.to_string()];
    rows.extend(account_rows("short", 31, None));
    rows.extend(account_rows("long", 64, Some(40)));
    rows.extend(account_rows("odd", 70, None));
    let f = write_csv(&rows);
    let rep = ingest_transactions_csv(f.path(), &TxSchema::default(), None).unwrap();
    let count = |a: &str| rep.sequences.iter().filter(|s| s.account == a).count();
    assert_eq!(count("short"), 0);
    assert_eq!(count("long"), 2);
    assert_eq!(count("odd"), 2);
    assert_eq!(rep.accounts_dropped, 1);
    assert_eq!(rep.rows_skipped, 0);
    assert!(rep.sequences.iter().all(|s| s.len() == 32 && s.steps.iter().all(|x| x.len() == CHANNELS)));
    // times descend with row index, so sorted order reverses the file and
    // row 40 lands in the first window
    let long: Vec<bool> = rep.sequences.iter().filter(|s| s.account == "long").map(|s| s.label).collect();
    assert_eq!(long, vec![true, false]);
}

#[test]
fn empty_file_is_an_empty_dataset() {
    let f = write_csv(&[]);
    let rep = ingest_transactions_csv(f.path(), &TxSchema::default(), None).unwrap();
    assert!(rep.sequences.is_empty());
    let f = write_csv(&[HEADER.to_string()]);
    assert!(ingest_transactions_csv(f.path(), &TxSchema::default(), None).unwrap().sequences.is_empty());
}

#[test]
fn missing_required_column_is_a_schema_error() {
    let f = write_csv(&["account,time,is_fraud".to_string(), "a,1,0".to_string()]);
    let err = ingest_transactions_csv(f.path(), &TxSchema::default(), None).unwrap_err();
    assert!(matches!(err, crate::ScafdsError::Schema(_)), "{err}");
}

#[test]
fn bad_rows_are_counted_and_missing_amounts_imputed() {
    let mut rows = vec![HEADER.to_string()];
    rows.extend(account_rows("a", 32, None));
    rows.push("a,5000,abc,cp1,wire,3,geo1,dev1,0".into());
    rows.push("a,5001,10,cp1,wire,3,geo1,dev1,maybe".into());
    rows.push("a,5002,-4,cp1,wire,3,geo1,dev1,0".into());
    rows.push("b,7,,cp1,wire,,geo1,dev1,0".into());
    let f = write_csv(&rows);
    let schema = TxSchema {
        seq_len: 1,
        ..TxSchema::default()
    };
    let rep = ingest_transactions_csv(f.path(), &schema, None).unwrap();
    assert_eq!(rep.rows_read, 36);
    assert_eq!(rep.rows_skipped, 3);
    let b = rep.sequences.iter().find(|s| s.account == "b").unwrap();
    assert_eq!(b.steps[0][0], rep.encoder.amount_median.ln_1p());
    let tod = rep.encoder.tod_median;
    assert_eq!(b.steps[0][3], (2.0 * std::f64::consts::PI * tod / 24.0).sin());
}

#[test]
fn codebook_ranks_by_frequency_and_reserves_zero() {
    let cb = Codebook::fit(["b", "a", "b", "c", "a", "b"]);
    assert_eq!(cb.encode("b"), 1);
    assert_eq!(cb.encode("a"), 2);
    assert_eq!(cb.encode("c"), 3);
    assert_eq!(cb.encode("never"), 0);
}

#[test]
fn fitted_encoder_is_reused_on_new_files() {
    let mut rows = vec![HEADER.to_string()];
    rows.extend(account_rows("a", 32, None));
    let train = ingest_transactions_csv(write_csv(&rows).path(), &TxSchema::default(), None).unwrap();
    let other = vec![HEADER.to_string(), "z,1,3,unseen,wire,1,geo0,dev0,0".into()];
    let schema = TxSchema {
        seq_len: 1,
        ..TxSchema::default()
    };
    let rep = ingest_transactions_csv(write_csv(&other).path(), &schema, Some(&train.encoder)).unwrap();
    assert_eq!(rep.encoder, train.encoder);
    assert_eq!(rep.sequences[0].steps[0][1], 0.0);
}

#[test]
fn median_examples() {
    assert_eq!(median([3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median([4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(median(std::iter::empty()), 0.0);
    assert_eq!(impute_median(&[Some(1.0), None, Some(5.0)]), vec![1.0, 3.0, 5.0]);
}

proptest! {
    #[test]
    fn imputation_leaves_complete_columns_untouched(col in prop::collection::vec(-1e6f64..1e6, 0..40)) {
        let opt: Vec<Option<f64>> = col.iter().copied().map(Some).collect();
        let out = impute_median(&opt);
        prop_assert_eq!(out.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), col.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn attention_is_on_the_simplex(seed in 0u64..500, t in 1usize..7) {
        let m = SeqModel::new(small_config(3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = m.score_transaction(&random_seq(t, 3, &mut rng)).unwrap();
        prop_assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.alpha.iter().all(|&a| a > 0.0));
        prop_assert!(s.score > 0.0 && s.score < 1.0);
    }
}
