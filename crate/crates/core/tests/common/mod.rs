//! Finite-difference gradient suite shared by the gradcheck and acceptance
//! targets. Every tape kernel and every composite block is checked on
//! small random inputs for each seed.

#![allow(dead_code)]

use breathnet::breathmask::{BreathMask, FRAME_DURATION};
use breathnet::classifier::{Classifier, LstmCell};
use breathnet::diff::{gradcheck, randn, GradcheckReport, Tape, Tensor, Var};
use breathnet::freq::FreqBranch;
use breathnet::fusion::CrossAttention;
use breathnet::losses::{center_loss, contrast_loss, pscl, weighted_ce_logits, BonaFideCenter, LossWeights};
use breathnet::metrics::Label;
use breathnet::params::{Binding, Init, ParamStore};
use breathnet::temporal::{BreathFilm, Sls, ToyEncoder};

pub const SEEDS: u64 = 20;

fn rn(r: usize, c: usize, seed: u64, salt: u64) -> Tensor<f64> {
    randn(r, c, seed.wrapping_mul(1_000_003).wrapping_add(salt))
}

/// Uniform-ish values in `[lo, hi]` from a normal draw.
fn spread(r: usize, c: usize, seed: u64, salt: u64, lo: f64, hi: f64) -> Tensor<f64> {
    rn(r, c, seed, salt).map(|z| lo + (hi - lo) * 0.5 * (1.0 + (z / 2.0).tanh()))
}

fn params_of(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

/// Splits leaves into a binding over the first `n` and the remainder.
fn bind(v: &[Var], n: usize) -> (Binding, &[Var]) {
    (Binding::from_vars(v[..n].to_vec()), &v[n..])
}

fn bits(seed: u64, len: usize) -> BreathMask {
    let b: Vec<bool> = (0..len).map(|t| (seed >> (t % 60)) & 1 == 1 || t == 0).collect();
    let mut b = b;
    b[len - 1] = false;
    BreathMask::new(b, FRAME_DURATION)
}

type Case = (&'static str, Box<dyn Fn(u64) -> GradcheckReport>);

fn unary(name: &'static str, f: fn(&mut Tape<f64>, Var) -> Var) -> Case {
    (name, Box::new(move |s| gradcheck(name, &[rn(3, 4, s, 1)], s, |t, v| Ok(f(t, v[0])))))
}

fn kernels() -> Vec<Case> {
    let mut cases: Vec<Case> = vec![
        unary("sigmoid", |t, x| t.sigmoid(x)),
        unary("tanh", |t, x| t.tanh(x)),
        unary("relu", |t, x| t.relu(x)),
        unary("selu", |t, x| t.selu(x)),
        unary("log_softmax", |t, x| t.log_softmax_rows(x)),
        unary("logsumexp", |t, x| t.logsumexp_rows(x)),
        unary("mean_rows", |t, x| t.mean_rows(x)),
        unary("mean_all", |t, x| t.mean_all(x)),
        unary("reverse_rows", |t, x| t.reverse_rows(x)),
        unary("shift_rows", |t, x| t.shift_rows(x, 2)),
        unary("transpose", |t, x| t.transpose(x)),
        unary("scale", |t, x| t.scale(x, -1.7)),
        unary("add_scalar", |t, x| t.add_scalar(x, 0.3)),
        ("ln", Box::new(|s| gradcheck("ln", &[spread(3, 4, s, 1, 0.2, 5.0)], s, |t, v| Ok(t.ln(v[0]))))),
        ("softmax", Box::new(|s| gradcheck("softmax", &[rn(3, 5, s, 1)], s, |t, v| Ok(t.softmax_rows(v[0], 0.7))))),
        ("matmul", Box::new(|s| gradcheck("matmul", &[rn(3, 4, s, 1), rn(4, 2, s, 2)], s, |t, v| t.matmul(v[0], v[1])))),
        ("matmul_nt", Box::new(|s| gradcheck("matmul_nt", &[rn(3, 4, s, 1), rn(5, 4, s, 2)], s, |t, v| t.matmul_nt(v[0], v[1])))),
        ("add_bias", Box::new(|s| gradcheck("add_bias", &[rn(3, 4, s, 1), rn(1, 4, s, 2)], s, |t, v| t.add_bias(v[0], v[1])))),
        ("add", Box::new(|s| gradcheck("add", &[rn(3, 4, s, 1), rn(3, 4, s, 2)], s, |t, v| t.add(v[0], v[1])))),
        ("sub", Box::new(|s| gradcheck("sub", &[rn(3, 4, s, 1), rn(3, 4, s, 2)], s, |t, v| t.sub(v[0], v[1])))),
        ("mul", Box::new(|s| gradcheck("mul", &[rn(3, 4, s, 1), rn(3, 4, s, 2)], s, |t, v| t.mul(v[0], v[1])))),
        (
            "mul_scalar_var",
            Box::new(|s| gradcheck("mul_scalar_var", &[rn(3, 4, s, 1), rn(1, 1, s, 2)], s, |t, v| t.mul_scalar_var(v[0], v[1]))),
        ),
        ("slice_cols", Box::new(|s| gradcheck("slice_cols", &[rn(3, 5, s, 1)], s, |t, v| t.slice_cols(v[0], 1, 3)))),
        ("slice_rows", Box::new(|s| gradcheck("slice_rows", &[rn(5, 3, s, 1)], s, |t, v| t.slice_rows(v[0], 2, 2)))),
        (
            "concat_cols",
            Box::new(|s| gradcheck("concat_cols", &[rn(3, 2, s, 1), rn(3, 4, s, 2)], s, |t, v| t.concat_cols(&[v[0], v[1], v[0]]))),
        ),
        (
            "concat_rows",
            Box::new(|s| gradcheck("concat_rows", &[rn(2, 3, s, 1), rn(4, 3, s, 2)], s, |t, v| t.concat_rows(&[v[1], v[0], v[1]]))),
        ),
        (
            "gather_rows",
            Box::new(|s| gradcheck("gather_rows", &[rn(3, 4, s, 1)], s, |t, v| t.gather_rows(v[0], &[2, 0, 2, 1, 2]))),
        ),
        ("cosine", Box::new(|s| gradcheck("cosine", &[rn(1, 6, s, 1), rn(1, 6, s, 2)], s, |t, v| t.cosine(v[0], v[1])))),
        ("frame", Box::new(|s| gradcheck("frame", &[rn(1, 23, s, 1)], s, |t, v| t.frame(v[0], 7, 4)))),
        ("pre_emphasis", Box::new(|s| gradcheck("pre_emphasis", &[rn(1, 12, s, 1)], s, |t, v| Ok(t.pre_emphasis(v[0], 0.97))))),
        ("max_pool_cols", Box::new(|s| gradcheck("max_pool_cols", &[rn(3, 13, s, 1)], s, |t, v| t.max_pool_cols(v[0], 4)))),
        ("avg_pool_rows", Box::new(|s| gradcheck("avg_pool_rows", &[rn(11, 3, s, 1)], s, |t, v| t.avg_pool_rows(v[0], 4)))),
        (
            "batch_norm",
            Box::new(|s| {
                let inputs = [rn(6, 5, s, 1), spread(2, 1, s, 2, 0.5, 1.5), rn(2, 1, s, 3)];
                gradcheck("batch_norm", &inputs, s, |t, v| Ok(t.batch_norm(v[0], v[1], v[2], 2, 1e-5, None)?.0))
            }),
        ),
        (
            "batch_norm_running",
            Box::new(|s| {
                let inputs = [rn(6, 5, s, 1), spread(2, 1, s, 2, 0.5, 1.5), rn(2, 1, s, 3)];
                gradcheck("batch_norm_running", &inputs, s, |t, v| {
                    Ok(t.batch_norm(v[0], v[1], v[2], 2, 1e-5, Some((&[0.1, -0.2], &[0.8, 1.3])))?.0)
                })
            }),
        ),
        (
            "sinc_kernels",
            Box::new(|s| {
                // Cutoffs enter in kHz so their gradients are O(1).
                let inputs = [spread(3, 1, s, 1, 0.05, 4.0), spread(3, 1, s, 2, 0.1, 3.0)];
                gradcheck("sinc_kernels", &inputs, s, |t, v| {
                    let low = t.scale(v[0], 1000.0);
                    let band = t.scale(v[1], 1000.0);
                    t.sinc_kernels(low, band, 17, 16_000.0)
                })
            }),
        ),
    ];
    cases.sort_by_key(|c| c.0);
    cases
}

fn blocks() -> Vec<Case> {
    vec![
        (
            "block:sls",
            Box::new(|s| {
                let mut store = ParamStore::<f64>::new();
                let sls = Sls::new(&mut store, &mut Init::new(s), 4);
                let n = store.len();
                let mut inputs = params_of(&store);
                inputs.extend((0..3).map(|l| rn(5, 4, s, 10 + l)));
                gradcheck("block:sls", &inputs, s, move |t, v| {
                    let (p, layers) = bind(v, n);
                    sls.forward(t, &p, layers).map(|o| o.features)
                })
            }),
        ),
        (
            "block:breath_film",
            Box::new(|s| {
                let mut store = ParamStore::<f64>::new();
                let film = BreathFilm::new(&mut store, &mut Init::new(s), 6, 4).unwrap();
                let n = store.len();
                let mut inputs = params_of(&store);
                inputs.push(rn(7, 4, s, 10));
                let mask = bits(s.wrapping_mul(0x9e37_79b9), 7);
                gradcheck("block:breath_film", &inputs, s, move |t, v| {
                    let (p, x) = bind(v, n);
                    film.forward(t, &p, x[0], &mask).map(|o| o.features)
                })
            }),
        ),
        (
            "block:sinc_cutoffs",
            Box::new(|s| {
                // Filterbank, normalization, activation and projection with
                // cutoffs parameterized in kHz.
                let mut store = ParamStore::<f64>::new();
                let fb = FreqBranch::new(&mut store, &mut Init::new(s), 3, 9, 4, 4, 0.97, 16_000.0).unwrap();
                let mut inputs = params_of(&store);
                let (li, bi) = (fb.low.index(), fb.band.index());
                inputs[li] = inputs[li].map(|v| v / 1000.0);
                inputs[bi] = inputs[bi].map(|v| v / 1000.0);
                let n = store.len();
                inputs.push(rn(1, 140, s, 10));
                inputs.push(rn(1, 140, s, 11));
                gradcheck("block:sinc_cutoffs", &inputs, s, move |t, v| {
                    let mut vars = v[..n].to_vec();
                    vars[li] = t.scale(v[li], 1000.0);
                    vars[bi] = t.scale(v[bi], 1000.0);
                    let p = Binding::from_vars(vars);
                    let out = fb.forward(t, &p, &v[n..], breathnet::freq::BnMode::Batch)?;
                    t.concat_rows(&out.features)
                })
            }),
        ),
        (
            "block:cross_attention",
            Box::new(|s| {
                let mut store = ParamStore::<f64>::new();
                let att = CrossAttention::new(&mut store, &mut Init::new(s), 4, 2).unwrap();
                let n = store.len();
                let mut inputs = params_of(&store);
                inputs.push(rn(3, 4, s, 10));
                inputs.push(rn(5, 4, s, 11));
                gradcheck("block:cross_attention", &inputs, s, move |t, v| {
                    let (p, x) = bind(v, n);
                    att.forward(t, &p, x[0], x[1]).map(|o| o.features)
                })
            }),
        ),
        (
            "block:lstm_cell",
            Box::new(|s| {
                let mut store = ParamStore::<f64>::new();
                let cell = LstmCell::new(&mut store, &mut Init::new(s), "c", 3, 2);
                let n = store.len();
                let mut inputs = params_of(&store);
                inputs.push(rn(4, 3, s, 10));
                gradcheck("block:lstm_cell", &inputs, s, move |t, v| {
                    let (p, x) = bind(v, n);
                    cell.run(t, &p, x[0])
                })
            }),
        ),
        (
            "block:classifier",
            Box::new(|s| {
                let mut store = ParamStore::<f64>::new();
                let cls = Classifier::new(&mut store, &mut Init::new(s), 4, &[3, 2]).unwrap();
                let n = store.len();
                let mut inputs = params_of(&store);
                inputs.push(rn(4, 4, s, 10));
                gradcheck("block:classifier", &inputs, s, move |t, v| {
                    let (p, x) = bind(v, n);
                    cls.forward(t, &p, x[0])
                })
            }),
        ),
        (
            "block:temporal_branch",
            Box::new(|s| {
                // Waveform to gated temporal features.
                let mut store = ParamStore::<f64>::new();
                let mut init = Init::new(s);
                let enc = ToyEncoder::new(&mut store, &mut init, 3, 3).unwrap();
                let sls = Sls::new(&mut store, &mut init, 3);
                let film = BreathFilm::new(&mut store, &mut init, 4, 3).unwrap();
                // The fixed-size analysis basis enters as a constant; its
                // gradient path is covered by the matmul, mul and ln kernels.
                let basis = store.find("encoder.basis").unwrap().index();
                let mut inputs = params_of(&store);
                let basis_value = inputs.remove(basis);
                let n = inputs.len();
                inputs.push(rn(1, 1040, s, 10).map(|v| 0.3 * v));
                let mask = bits(s, 3);
                gradcheck("block:temporal_branch", &inputs, s, move |t, v| {
                    let mut vars = v[..n].to_vec();
                    vars.insert(basis, t.constant(basis_value.clone()));
                    let p = Binding::from_vars(vars);
                    let w = &v[n..];
                    let layers = enc.forward(t, &p, w[0])?;
                    let agg = sls.forward(t, &p, &layers)?;
                    film.forward(t, &p, agg.features, &mask).map(|o| o.features)
                })
            }),
        ),
        (
            "loss:pscl",
            Box::new(|s| {
                let inputs: Vec<Tensor<f64>> = (0..4).map(|i| rn(1, 5, s, i)).collect();
                gradcheck("loss:pscl", &inputs, s, |t, v| Ok(pscl(t, v, 0.5)?.expect("four embeddings")))
            }),
        ),
        (
            "loss:center",
            Box::new(|s| {
                let inputs: Vec<Tensor<f64>> = (0..3).map(|i| rn(1, 5, s, i)).collect();
                let center = BonaFideCenter { c: rn(1, 5, s, 9).into_data(), momentum: 0.9, initialized: true };
                gradcheck("loss:center", &inputs, s, move |t, v| Ok(center_loss(t, v, &center)?.expect("non-empty")))
            }),
        ),
        (
            "loss:contrast",
            Box::new(|s| {
                let inputs: Vec<Tensor<f64>> = (0..3).map(|i| rn(1, 5, s, i)).collect();
                let center = BonaFideCenter { c: rn(1, 5, s, 9).into_data(), momentum: 0.9, initialized: true };
                gradcheck("loss:contrast", &inputs, s, move |t, v| Ok(contrast_loss(t, v, &center)?.expect("non-empty")))
            }),
        ),
        (
            "loss:weighted_ce",
            Box::new(|s| {
                let labels: Vec<Label> =
                    (0..5).map(|i| if (s >> i) & 1 == 1 { Label::Bonafide } else { Label::Spoof }).collect();
                gradcheck("loss:weighted_ce", &[rn(5, 2, s, 1)], s, move |t, v| {
                    weighted_ce_logits(t, v[0], &labels, &LossWeights::default())
                })
            }),
        ),
    ]
}

/// All kernels and blocks, `SEEDS` seeds each, in a fixed order.
pub fn gradient_suite() -> Vec<GradcheckReport> {
    let mut out = Vec::new();
    for (_, case) in kernels().into_iter().chain(blocks()) {
        for s in 0..SEEDS {
            out.push(case(s));
        }
    }
    out
}

/// Names of every kernel the tape can record, minus leaves and constants.
pub fn covered_kernels() -> Vec<&'static str> {
    kernels().into_iter().map(|c| c.0).collect()
}
