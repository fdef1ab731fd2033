//! Sparse feature blocks and the assembled network against direct
//! recomputation and difference quotients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sinet::model::{concat_channels, split_channels, Branch};
use sinet::{
    adam_step, conv2d_same, soft_threshold, AdamConfig, AdamState, KernelBank, ModelConfig, SfebParams, SinetParams,
    Tensor3, ThresholdSchedule, Variant,
};

fn bank(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize, scale: f64) -> KernelBank<f64> {
    let w = (0..out * inp * k * k).map(|_| rng.random_range(-scale..scale)).collect();
    KernelBank::new(out, inp, k, w, None).unwrap()
}

fn random_block(rng: &mut ChaCha8Rng, filters: usize, k: usize, iters: usize, tied: bool) -> SfebParams<f64> {
    let owned = if tied { 1 } else { iters };
    let w_in = if tied { vec![] } else { (0..owned).map(|_| bank(rng, filters, 1, k, 0.4)).collect() };
    let w_u = (0..owned).map(|_| bank(rng, filters, 1, k, 0.4)).collect();
    let w_d = (0..owned).map(|_| bank(rng, 1, filters, k, 0.4)).collect();
    let schedule = ThresholdSchedule::new(rng.random_range(-1.0..1.0), rng.random_range(-3.0..-1.0));
    SfebParams::from_banks(w_in, w_u, w_d, schedule, iters, tied).unwrap()
}

fn image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3<f64> {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0))
}

#[test]
fn single_iteration_is_thresholded_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = random_block(&mut rng, 3, 3, 1, false);
    let x = image(&mut rng, 7, 9, 1);
    let want = soft_threshold(&conv2d_same(&x, block.in_bank(0)).unwrap(), block.schedule.theta_at(0)).unwrap();
    assert!(block.infer(&x).unwrap().max_abs_diff(&want).unwrap() < 1e-15);
}

#[test]
fn unrolled_iterations_match_hand_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for tied in [false, true] {
        let block = random_block(&mut rng, 3, 3, 4, tied);
        let x = image(&mut rng, 8, 6, 1);
        let mut z = soft_threshold(&conv2d_same(&x, block.in_bank(0)).unwrap(), block.schedule.theta_at(0)).unwrap();
        for k in 1..4 {
            let back = conv2d_same(&conv2d_same(&z, block.d_bank(k)).unwrap(), block.u_bank(k)).unwrap();
            let u = z.sub(&back).unwrap().add(&conv2d_same(&x, block.in_bank(k)).unwrap()).unwrap();
            z = soft_threshold(&u, block.schedule.theta_at(k)).unwrap();
        }
        let (got, trace) = block.forward(&x).unwrap();
        assert!(got.max_abs_diff(&z).unwrap() < 1e-13, "tied {tied}");
        assert_eq!(trace.codes().len(), 4);
        assert_eq!(block.infer(&x).unwrap(), got);
    }
}

#[test]
fn zero_input_gives_zero_code() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let block = random_block(&mut rng, 4, 5, 3, false);
    let z = block.infer(&Tensor3::zeros(6, 6, 1)).unwrap();
    assert_eq!(z.count_zeros(), z.len());
}

#[test]
fn raising_the_threshold_bias_never_densifies_one_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut block = random_block(&mut rng, 4, 3, 1, false);
    let x = image(&mut rng, 10, 10, 1);
    let mut prev = 0;
    for b in [-4.0, -2.0, -1.0, 0.0, 1.0, 3.0] {
        block.schedule.b_theta = b;
        let zeros = block.infer(&x).unwrap().count_zeros();
        assert!(zeros >= prev, "b_theta {b}: {zeros} < {prev}");
        prev = zeros;
    }
}

#[test]
fn tied_block_reuses_one_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let block = random_block(&mut rng, 2, 3, 3, true);
    assert!(block.is_tied());
    for k in 0..3 {
        assert_eq!(block.in_bank(k), block.u_bank(0));
        assert_eq!(block.u_bank(k), block.u_bank(0));
        assert_eq!(block.d_bank(k), block.d_bank(0));
    }
}

/// Loss `⟨z, R⟩`; configurations whose trace sits within 1e-3 of a
/// shrinkage kink are redrawn so the central difference stays on one piece.
#[test]
fn block_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 4 {
        let tied = checked % 2 == 1;
        let block = random_block(&mut rng, 3, 3, 2, tied);
        let x = image(&mut rng, 10, 10, 1);
        let (z, trace) = block.forward(&x).unwrap();
        if trace.kink_margin() < 1e-3 || z.count_zeros() == z.len() {
            continue;
        }
        let r = Tensor3::from_fn(10, 10, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let (grads, gx) = block.backward(&x, &r, &trace).unwrap();
        let f = |b: &SfebParams<f64>, x: &Tensor3<f64>| b.infer(x).unwrap().dot(&r).unwrap();
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3);

        // schedule parameters
        let mut p = block.clone();
        p.schedule.w_raw += h;
        let mut m = block.clone();
        m.schedule.w_raw -= h;
        assert!(close((f(&p, &x) - f(&m, &x)) / (2.0 * h), grads.schedule.w_raw));
        let mut p = block.clone();
        p.schedule.b_theta += h;
        let mut m = block.clone();
        m.schedule.b_theta -= h;
        assert!(close((f(&p, &x) - f(&m, &x)) / (2.0 * h), grads.schedule.b_theta));

        // input pixels
        for i in (0..100).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            assert!(close((f(&block, &xp) - f(&block, &xm)) / (2.0 * h), gx.data()[i]));
        }

        // one weight in every bank of the last iteration
        let k = 1;
        for which in 0..3 {
            let pick = |b: &SfebParams<f64>| match which {
                0 => b.in_bank(k).clone(),
                1 => b.u_bank(k).clone(),
                _ => b.d_bank(k).clone(),
            };
            if tied && which == 0 {
                continue;
            }
            let idx = rng.random_range(0..pick(&block).weights().len());
            let rebuild = |delta: f64| {
                let mut banks: Vec<Vec<KernelBank<f64>>> = vec![vec![], vec![], vec![]];
                let owned = if tied { 1 } else { 2 };
                for j in 0..owned {
                    if !tied {
                        banks[0].push(block.in_bank(j).clone());
                    }
                    banks[1].push(block.u_bank(j).clone());
                    banks[2].push(block.d_bank(j).clone());
                }
                let slot = if tied { 0 } else { k };
                banks[which][slot].weights_mut()[idx] += delta;
                let [w_in, w_u, w_d] = <[Vec<KernelBank<f64>>; 3]>::try_from(banks).unwrap();
                SfebParams::from_banks(w_in, w_u, w_d, block.schedule, 2, tied).unwrap()
            };
            let fd = (f(&rebuild(h), &x) - f(&rebuild(-h), &x)) / (2.0 * h);
            let an = pick(&grads).weights()[idx];
            // a tied weight feeds every iteration, so its gradient sums all uses
            assert!(close(fd, an), "tied {tied} bank {which}: {fd} vs {an}");
        }
        checked += 1;
    }
}

#[test]
fn network_is_split_branch_reconstruct_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = SinetParams::<f64>::init(ModelConfig::new(3, 3, 2, Variant::Full), 9).unwrap();
    let img = image(&mut rng, 9, 8, 3);
    let chans = split_channels(&img).unwrap();
    let outs: Vec<Tensor3<f64>> = (0..3)
        .map(|i| {
            let Branch::Sparse(block) = &params.branches[i] else { panic!("sparse branch expected") };
            conv2d_same(&block.infer(&chans[i]).unwrap(), &params.recon[i]).unwrap()
        })
        .collect();
    let want = concat_channels(&outs[0], &outs[1], &outs[2]).unwrap();
    assert!(params.infer(&img).unwrap().max_abs_diff(&want).unwrap() < 1e-14);
}

#[test]
fn zero_image_maps_to_reconstruction_bias() {
    let params = SinetParams::<f64>::init(ModelConfig::new(3, 3, 2, Variant::Full), 10).unwrap();
    let out = params.infer(&Tensor3::zeros(5, 6, 3)).unwrap();
    for c in 0..3 {
        let b = params.recon[c].bias().unwrap()[0];
        assert!(out.channel(c).unwrap().data().iter().all(|&v| v == b));
    }
}

#[test]
fn gradient_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = SinetParams::<f64>::init(ModelConfig::new(3, 3, 2, Variant::Full), 11).unwrap();
    let img = image(&mut rng, 7, 7, 3);
    let pass = params.forward(&img).unwrap();

    let g = params.backward(&img, &Tensor3::zeros(7, 7, 3), &pass).unwrap();
    assert!(g.param_slices().iter().all(|(_, s)| s.iter().all(|&v| v == 0.0)));

    // the reconstruction bias gradient is the upstream sum of its channel
    let up = Tensor3::from_fn(7, 7, 3, |_, _, _| rng.random_range(-1.0..1.0));
    let g = params.backward(&img, &up, &pass).unwrap();
    for c in 0..3 {
        let want = up.channel(c).unwrap().sum();
        assert!((g.recon[c].bias().unwrap()[0] - want).abs() < 1e-12);
    }
}

#[test]
fn adam_matches_hand_computed_steps() {
    let cfg = AdamConfig { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
    let mut state = AdamState::<f64>::new();
    let mut p = vec![1.0, -2.0];
    let grads = [[0.5, -1.0], [0.25, 2.0], [-1.0, 0.0]];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut want = p.clone();
    for (t, g) in grads.iter().enumerate() {
        state.step(&cfg, &mut [&mut p[..]], &[&g[..]]).unwrap();
        let t = t as i32 + 1;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            want[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert!((p[i] - want[i]).abs() < 1e-14, "step {t}");
        }
    }
    assert_eq!(state.step_count(), 3);
}

#[test]
fn adam_network_step_moves_against_gradient() {
    let mut params = SinetParams::<f64>::init(ModelConfig::new(2, 3, 1, Variant::Full), 12).unwrap();
    let before = params.clone();
    let mut grads = params.zeros_like();
    grads.recon[0].bias_mut().unwrap()[0] = 3.0;
    let mut state = AdamState::new();
    let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
    adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    let moved = before.recon[0].bias().unwrap()[0] - params.recon[0].bias().unwrap()[0];
    assert!((moved - 0.01).abs() < 1e-9);
    let mut rest = params.clone();
    rest.recon[0].bias_mut().unwrap()[0] = before.recon[0].bias().unwrap()[0];
    assert_eq!(rest, before);
}
