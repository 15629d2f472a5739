use aligan_core::autodiff::{AdamConfig, AdamState, Graph, NodeId, ParamSet};
use aligan_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random_params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r: usize, c: usize| {
        let data = (0..r * c).map(|_| rng.random_range(-0.8..0.8)).collect();
        Tensor::new(if c == 1 { vec![r] } else { vec![r, c] }, data).unwrap()
    };
    let mut p = ParamSet::new();
    p.insert("w1", m(5, 4));
    p.insert("b1", m(5, 1));
    p.insert("w2", m(4, 5));
    p.insert("b2", m(4, 1));
    p.insert("w3", m(3, 4));
    p.insert("b3", m(3, 1));
    p
}

/// relu -> sigmoid -> softmax stack, scored by cross-entropy plus a
/// squared-error term that passes through concat, slice, mul and reshape.
fn net(g: &mut Graph, p: &ParamSet) -> NodeId {
    let ids = g.params_from(p).unwrap();
    let x = g.constant(Tensor::vector(vec![0.3, -1.2, 0.7, 0.05])).unwrap();
    let layer = |g: &mut Graph, w: &str, b: &str, h: NodeId| {
        let z = g.matmul(ids[w], h).unwrap();
        g.add(z, ids[b]).unwrap()
    };
    let h1 = layer(g, "w1", "b1", x);
    let h1 = g.relu(h1).unwrap();
    let h2 = layer(g, "w2", "b2", h1);
    let h2 = g.sigmoid(h2).unwrap();
    let z3 = layer(g, "w3", "b3", h2);
    let y = g.softmax(z3).unwrap();

    let target = g.constant(Tensor::vector(vec![0.2, 0.5, 0.3])).unwrap();
    let logp = g.log_prob(y).unwrap();
    let ce = g.mul(target, logp).unwrap();
    let ce = g.sum(ce).unwrap();
    let ce = g.scale(ce, -1.0).unwrap();

    let both = g.concat(&[h2, y]).unwrap();
    let mid = g.slice(both, 2, 4).unwrap();
    let grid = g.reshape(mid, &[2, 2]).unwrap();
    let grid_t = g.transpose(grid).unwrap();
    let prod = g.matmul(grid, grid_t).unwrap();
    let sq = g.square(prod).unwrap();
    let reg = g.mean(sq).unwrap();
    let reg = g.add_scalar(reg, -0.25).unwrap();
    g.add(ce, reg).unwrap()
}

fn loss(p: &ParamSet) -> f64 {
    let mut g = Graph::new();
    let out = net(&mut g, p);
    g.scalar(out).unwrap()
}

#[test]
fn random_three_layer_net_matches_central_differences() {
    for seed in 0..5 {
        let p = random_params(seed);
        let mut g = Graph::new();
        let out = net(&mut g, &p);
        let grads = g.backward(out).unwrap();
        assert_eq!(grads.len(), p.len());
        for (name, an) in grads.iter() {
            for k in 0..an.len() {
                let mut plus = p.clone();
                plus.get_mut(name).unwrap().data_mut()[k] += STEP;
                let mut minus = p.clone();
                minus.get_mut(name).unwrap().data_mut()[k] -= STEP;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
                let a = an.data()[k];
                let err = (fd - a).abs() / (fd.abs() + a.abs()).max(1e-8);
                assert!(err < 1e-5, "seed {seed} {name}[{k}]: fd {fd} vs {a}");
            }
        }
    }
}

#[test]
fn replay_agrees_with_a_fresh_build() {
    let p = random_params(7);
    let mut g = Graph::new();
    let out = net(&mut g, &p);
    let q = random_params(8);
    let replayed = g.replay_with_params(&q, &[out]).unwrap();
    assert_eq!(replayed[0].item().unwrap(), loss(&q));
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::vector(vec![3.0, -2.0, 0.5]));
    let mut state = AdamState::new(AdamConfig::default());
    let f = |p: &ParamSet| p.get("w").unwrap().squared_norm();
    let start = f(&p);
    for _ in 0..500 {
        let mut g = Graph::new();
        let ids = g.params_from(&p).unwrap();
        let sq = g.square(ids["w"]).unwrap();
        let out = g.sum(sq).unwrap();
        let grads = g.backward(out).unwrap();
        state.step(&mut p, &grads, 0.05).unwrap();
    }
    assert!(f(&p) < 1e-3 * start, "{}", f(&p));
    assert_eq!(state.steps(), 500);
}
