use rand::Rng;

use super::{standard_normal_vec, ChainRng, ChainState, Kernel, Transition};
use crate::integrators::{leapfrog_step, LeapfrogState};
use crate::linalg::dot;
use crate::targets::{log_sum_exp, SharedTarget};

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// No-U-turn sampler with identity mass and multinomial state selection.
#[derive(Clone)]
pub struct Nuts {
    target: SharedTarget,
    eps: f64,
    max_depth: usize,
}

struct Tree {
    left: LeapfrogState,
    right: LeapfrogState,
    proposal: LeapfrogState,
    log_weight: f64,
    rho: Vec<f64>,
    n_leapfrog: usize,
    sum_accept: f64,
    /// Diverged or turned; the subtree must not contribute a proposal.
    invalid: bool,
    diverged: bool,
}

fn no_u_turn(p_minus: &[f64], p_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_minus, rho) > 0.0 && dot(p_plus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl Nuts {
    pub fn new(target: SharedTarget, eps: f64) -> Self {
        Self { target, eps, max_depth: 10 }
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    fn leaf(&self, from: &LeapfrogState, dir: f64, h0: f64) -> Tree {
        let step = leapfrog_step(self.target.as_ref(), from, dir * self.eps);
        let (state, h) = match step {
            Ok(s) => {
                let h = s.hamiltonian();
                (s, if h.is_finite() { h } else { f64::INFINITY })
            }
            Err(_) => (from.clone(), f64::INFINITY),
        };
        let diverged = h - h0 > DIVERGENCE_THRESHOLD;
        Tree {
            left: state.clone(),
            right: state.clone(),
            rho: state.momentum.clone(),
            proposal: state,
            log_weight: -h,
            n_leapfrog: 1,
            sum_accept: (h0 - h).min(0.0).exp(),
            invalid: diverged,
            diverged,
        }
    }

    fn build<R: Rng + ?Sized>(&self, from: &LeapfrogState, dir: f64, depth: usize, h0: f64, rng: &mut R) -> Tree {
        if depth == 0 {
            return self.leaf(from, dir, h0);
        }
        let inner = self.build(from, dir, depth - 1, h0, rng);
        if inner.invalid {
            return inner;
        }
        let edge = if dir > 0.0 { &inner.right } else { &inner.left };
        let outer = self.build(edge, dir, depth - 1, h0, rng);
        let n_leapfrog = inner.n_leapfrog + outer.n_leapfrog;
        let sum_accept = inner.sum_accept + outer.sum_accept;
        if outer.invalid {
            return Tree { n_leapfrog, sum_accept, invalid: true, diverged: outer.diverged, ..inner };
        }
        let log_weight = log_sum_exp(&[inner.log_weight, outer.log_weight]);
        let take_outer = rng.random::<f64>() < (outer.log_weight - log_weight).exp();
        let (l, r) = if dir > 0.0 { (inner, outer) } else { (outer, inner) };
        merge(l, r, log_weight, take_outer == (dir > 0.0), n_leapfrog, sum_accept)
    }
}

/// Joins adjacent subtrees `l` (backward) and `r` (forward) and applies the
/// U-turn checks across the whole tree and across the join.
fn merge(l: Tree, r: Tree, log_weight: f64, take_right: bool, n_leapfrog: usize, sum_accept: f64) -> Tree {
    let rho = add(&l.rho, &r.rho);
    let turned = !no_u_turn(&l.left.momentum, &r.right.momentum, &rho)
        || !no_u_turn(&l.left.momentum, &r.left.momentum, &add(&l.rho, &r.left.momentum))
        || !no_u_turn(&l.right.momentum, &r.right.momentum, &add(&r.rho, &l.right.momentum));
    let proposal = if take_right { r.proposal } else { l.proposal };
    Tree {
        left: l.left,
        right: r.right,
        proposal,
        log_weight,
        rho,
        n_leapfrog,
        sum_accept,
        invalid: turned,
        diverged: false,
    }
}

impl Kernel for Nuts {
    fn name(&self) -> String {
        "nuts".into()
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }

    fn step_size(&self) -> f64 {
        self.eps
    }

    fn set_step_size(&mut self, eps: f64) {
        self.eps = eps;
    }

    fn transition(&mut self, state: &mut ChainState, rng: &mut ChainRng) -> Transition {
        let p = standard_normal_vec(rng, state.theta.len());
        let z0 = LeapfrogState {
            theta: state.theta.clone(),
            momentum: p.clone(),
            log_density: state.log_density,
            grad: state.grad.clone(),
        };
        let h0 = z0.hamiltonian();
        let mut tree = Tree {
            left: z0.clone(),
            right: z0.clone(),
            proposal: z0,
            log_weight: -h0,
            rho: p,
            n_leapfrog: 0,
            sum_accept: 0.0,
            invalid: false,
            diverged: false,
        };
        let mut depth = 0;
        let mut diverged = false;
        while depth < self.max_depth {
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let edge = if dir > 0.0 { tree.right.clone() } else { tree.left.clone() };
            let sub = self.build(&edge, dir, depth, h0, rng);
            tree.n_leapfrog += sub.n_leapfrog;
            tree.sum_accept += sub.sum_accept;
            depth += 1;
            if sub.invalid {
                diverged = sub.diverged;
                break;
            }
            // biased progressive sampling favours the new subtree
            let take_new = rng.random::<f64>() < (sub.log_weight - tree.log_weight).min(0.0).exp();
            let log_weight = log_sum_exp(&[tree.log_weight, sub.log_weight]);
            let (n, s) = (tree.n_leapfrog, tree.sum_accept);
            let old_proposal_is_right = dir < 0.0;
            let (l, r) = if dir > 0.0 { (tree, sub) } else { (sub, tree) };
            // take_right selects r's proposal; the new subtree is r when moving forward
            let take_right = if take_new { dir > 0.0 } else { old_proposal_is_right };
            tree = merge(l, r, log_weight, take_right, n, s);
            if tree.invalid {
                break;
            }
        }
        let accept_stat = if tree.n_leapfrog > 0 { tree.sum_accept / tree.n_leapfrog as f64 } else { 0.0 };
        let accepted = tree.proposal.theta != state.theta;
        let prop = tree.proposal;
        *state = ChainState { theta: prop.theta, log_density: prop.log_density, grad: prop.grad };
        Transition {
            accepted,
            accept_stat,
            energy: h0,
            grad_evals: tree.n_leapfrog,
            failed: diverged,
            truncated: false,
            tree_depth: Some(depth),
        }
    }
}
