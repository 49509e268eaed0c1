//! Properties of the two cross-attention blocks.

mod common;

use exreg::regnet::{AttentionTrace, Regnet, RegnetConfig, TokenGrid};
use exreg::{Real, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: Real = 1e-9;

fn jittered(seed: u64, stack_len: usize) -> Regnet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Regnet::with_stack_len(RegnetConfig::micro(), stack_len, seed).unwrap();
    for t in r.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    r
}

#[test]
fn softmax_rows_sum_to_one_in_both_blocks() {
    let regnet = jittered(31, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let tape = Tape::new();
    let b = regnet.params.bind(&tape, false);
    let stack: Vec<_> = [-1.5, -1.0, 0.0, 1.0, 1.5]
        .iter()
        .map(|&e| (e, tape.constant(Tensor::from_fn([1, 3, 32, 32], |_| rng.gen_range(0.0..1.0)))))
        .collect();
    let mut trace = AttentionTrace::default();
    regnet.forward_traced(&b, &stack, Some(&mut trace)).unwrap();
    assert_eq!(trace.weights.len(), 2);
    for block in &trace.weights {
        assert_eq!(block.len(), regnet.config.heads);
        for head in block {
            let w = head.value();
            let (q, k) = (w.shape()[0], w.shape()[1]);
            assert_eq!((q, k), (4, 20));
            for row in w.data().chunks(k) {
                assert!((row.iter().sum::<Real>() - 1.0).abs() <= TOL);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }
}

#[test]
fn single_token_context_returns_the_value() {
    let regnet = jittered(33, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let tape = Tape::new();
    let b = regnet.params.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn([1, 3, 16, 16], |_| rng.gen_range(0.0..1.0)));
    let mut trace = AttentionTrace::default();
    regnet.forward_traced(&b, &[(0.0, x)], Some(&mut trace)).unwrap();
    for block in 0..2 {
        for head in &trace.weights[block] {
            assert_eq!(head.value().data(), &[1.0]);
        }
        assert_eq!(trace.heads[block].value().data(), trace.values[block].value().data());
    }
}

#[test]
fn context_order_does_not_matter() {
    let regnet = jittered(35, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let c = regnet.config.token_channels();
    let g = 2;
    let evs = [-1.5, -1.0, 0.0, 1.0, 1.5];
    let tokens: Vec<Tensor> = evs.iter().map(|_| common::rand_tensor(&[1, c, g, g], &mut rng)).collect();
    let e_star = common::rand_tensor(&[1, 1, g, g], &mut rng);

    let run = |order: &[usize]| -> Vec<Real> {
        let tape = Tape::new();
        let b = regnet.params.bind(&tape, false);
        let grids: Vec<TokenGrid> = order
            .iter()
            .map(|&i| TokenGrid {
                tokens: tape.constant(tokens[i].clone()),
                ev: evs[i],
            })
            .collect();
        let y = regnet
            .cross_attend(&b, &grids, tape.constant(e_star.clone()), None)
            .unwrap();
        let out = y.value().data().to_vec();
        out
    };
    let base = run(&[0, 1, 2, 3, 4]);
    let mut order: Vec<usize> = (0..5).collect();
    for _ in 0..10 {
        order.shuffle(&mut rng);
        assert!(common::max_abs_diff(&run(&order), &base) <= TOL);
    }
}
