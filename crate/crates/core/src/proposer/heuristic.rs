use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_inputs, CandidateBatch, Proposer, ProposerKind};
use crate::domain::{LawCandidate, Solution, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr, Func, STRAIN_VAR};
use crate::simulators::{TaskInstance, TspInstance};

const MAX_LAW_NODES: usize = 25;
const MAX_LAW_DEPTH: usize = 8;
/// Gaussian jitter floor so a zero temperature still moves molecule values.
const MIN_JITTER: f64 = 0.02;

/// Seeded, stateless proposer. Every call is a pure function of the seed,
/// the task, the trajectory and the temperature.
#[derive(Debug, Clone)]
pub struct HeuristicProposer {
    pub kind: ProposerKind,
    pub seed: u64,
    pub max_candidates: usize,
    pub step: f64,
}

impl Proposer for HeuristicProposer {
    fn propose(&mut self, task: &TaskInstance, trajectory: &Trajectory, temperature: f64) -> Result<CandidateBatch> {
        check_inputs(trajectory, temperature)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory.len() as u64);
        let n = self.max_candidates;
        let raw = match (self.kind, task) {
            (ProposerKind::HeuristicTsp, TaskInstance::Tsp(t)) => tsp(t, trajectory, temperature, n, &mut rng),
            (ProposerKind::HeuristicNumeric, TaskInstance::LinearSystem(_)) => {
                numeric(trajectory, temperature, n, self.step, &mut rng)
            }
            (ProposerKind::HeuristicLaw, TaskInstance::ConstitutiveLaw(_)) => law(trajectory, temperature, n, &mut rng),
            (ProposerKind::HeuristicMolecule, TaskInstance::MoleculeProperty(_)) => {
                molecule(trajectory, temperature, n, &mut rng)
            }
            (kind, task) => {
                return Err(Error::Config(format!(
                    "proposer {kind:?} cannot serve a {} task",
                    task.kind()
                )));
            }
        };
        let mut batch = CandidateBatch::default();
        for s in raw {
            let d = s.descriptor();
            batch.offer(task, s, d);
        }
        Ok(batch)
    }
}

fn seen_set(trajectory: &Trajectory) -> HashSet<String> {
    trajectory.evaluated().map(|(s, _)| s.descriptor()).collect()
}

/// Evaluated candidates of one kind, best first, duplicates dropped.
fn ranked(trajectory: &Trajectory) -> Vec<(&Solution, f64)> {
    let mut seen = HashSet::new();
    let mut v: Vec<(&Solution, f64)> = trajectory
        .evaluated()
        .filter(|(s, _)| seen.insert(s.descriptor()))
        .collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    v
}

/// Rotation starting at the smallest node, oriented so the second node is
/// smaller than the last.
pub fn canonical_tour(tour: &[usize]) -> Vec<usize> {
    let Some(pos) = tour.iter().enumerate().min_by_key(|(_, v)| **v).map(|(i, _)| i) else {
        return Vec::new();
    };
    let mut t: Vec<usize> = tour[pos..].iter().chain(&tour[..pos]).copied().collect();
    if t.len() > 2 && t[1] > t[t.len() - 1] {
        t[1..].reverse();
    }
    t
}

/// All distinct 2-opt moves of `tour`, shortest resulting tour first.
pub fn two_opt_neighbours(inst: &TspInstance, tour: &[usize]) -> Vec<Vec<usize>> {
    let n = tour.len();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    seen.insert(canonical_tour(tour));
    for i in 1..n {
        for j in i + 1..n {
            let mut t = tour.to_vec();
            t[i..=j].reverse();
            let c = canonical_tour(&t);
            if seen.insert(c.clone()) {
                out.push(c);
            }
        }
    }
    let mut scored: Vec<(f64, Vec<usize>)> = out.into_iter().map(|t| (inst.tour_length(&t), t)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, t)| t).collect()
}

/// Each slot is a seeded random permutation with probability `temp`,
/// otherwise the next-best unseen 2-opt neighbour, walking outward from the
/// best tour through the ranked history.
fn tsp(inst: &TspInstance, traj: &Trajectory, temp: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Solution> {
    let mut seen: HashSet<Vec<usize>> = traj
        .evaluated()
        .filter_map(|(s, _)| match s {
            Solution::Tour(t) => Some(canonical_tour(t)),
            _ => None,
        })
        .collect();
    let pool: Vec<Vec<usize>> = ranked(traj)
        .into_iter()
        .filter_map(|(s, _)| match s {
            Solution::Tour(t) => Some(t.clone()),
            _ => None,
        })
        .collect();
    let mut pool_idx = 0;
    let mut neigh: Vec<Vec<usize>> = Vec::new();
    let mut cursor = 0;
    let mut out = Vec::new();
    for _ in 0..n {
        let explore = rng.random::<f64>() < temp;
        let mut pick = None;
        if !explore {
            while pick.is_none() {
                if cursor >= neigh.len() {
                    let Some(base) = pool.get(pool_idx) else { break };
                    neigh = two_opt_neighbours(inst, base);
                    cursor = 0;
                    pool_idx += 1;
                    continue;
                }
                let c = &neigh[cursor];
                cursor += 1;
                if !seen.contains(c) {
                    pick = Some(c.clone());
                }
            }
        }
        if pick.is_none() {
            for _ in 0..32 {
                let mut t: Vec<usize> = (0..inst.len()).collect();
                t.shuffle(rng);
                let c = canonical_tour(&t);
                if !seen.contains(&c) {
                    pick = Some(c);
                    break;
                }
            }
        }
        if let Some(c) = pick {
            seen.insert(c.clone());
            out.push(Solution::Tour(c));
        }
    }
    out
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Lattice search around the best pair. The pitch halves whenever every
/// lattice neighbour has been evaluated. With probability `temp` a slot is a
/// Gaussian jump (std proportional to `temp`) snapped to the lattice.
fn numeric(traj: &Trajectory, temp: f64, n: usize, step: f64, rng: &mut ChaCha8Rng) -> Vec<Solution> {
    let Some(&(Solution::LinearParams { w, b }, _)) = ranked(traj).first() else {
        return Vec::new();
    };
    let mut seen = seen_set(traj);
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
        (-1.0, -1.0),
    ];
    let at = |dw: f64, db: f64| Solution::LinearParams { w: w + dw, b: b + db };
    let mut pitch = step;
    for _ in 0..40 {
        if DIRS
            .iter()
            .any(|(dw, db)| !seen.contains(&at(dw * pitch, db * pitch).descriptor()))
        {
            break;
        }
        pitch /= 2.0;
    }
    let mut lattice = DIRS.iter().map(|(dw, db)| at(dw * pitch, db * pitch));
    let mut out = Vec::new();
    for _ in 0..n {
        let cand = if rng.random::<f64>() < temp {
            let sigma = 4.0 * step * temp;
            let dw = (gauss(rng) * sigma / pitch).round() * pitch;
            let db = (gauss(rng) * sigma / pitch).round() * pitch;
            Some(at(dw, db))
        } else {
            lattice.by_ref().find(|s| !seen.contains(&s.descriptor()))
        };
        if let Some(c) = cand {
            if seen.insert(c.descriptor()) {
                out.push(c);
            }
        }
    }
    out
}

/// Parameter jitter on the best law; with probability `temp` a slot is a
/// single-node structural mutation instead.
fn law(traj: &Trajectory, temp: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Solution> {
    let Some(&(Solution::LawExpr(best), _)) = ranked(traj).first() else {
        return Vec::new();
    };
    let mut seen = seen_set(traj);
    let mut out = Vec::new();
    for _ in 0..n {
        let cand = if rng.random::<f64>() < temp {
            mutate_law(best, rng)
        } else {
            Some(jitter_params(best, temp, rng))
        };
        if let Some(c) = cand.map(Solution::LawExpr) {
            if seen.insert(c.descriptor()) {
                out.push(c);
            }
        }
    }
    out
}

fn jitter_params(law: &LawCandidate, temp: f64, rng: &mut ChaCha8Rng) -> LawCandidate {
    let s = 0.01 + 0.3 * temp;
    let mut params = law.params.clone();
    for v in params.values_mut() {
        *v = *v * (1.0 + s * gauss(rng)) + 0.1 * s * gauss(rng);
    }
    LawCandidate::from_ast(law.ast.clone(), params)
}

fn fresh_param(law: &LawCandidate) -> String {
    let used = law.ast.params();
    (1..)
        .map(|i| format!("c{i}"))
        .find(|c| !used.contains(c) && !law.params.contains_key(c))
        .expect("unbounded")
}

fn subtree_mut(e: &mut Expr, index: usize) -> Option<&mut Expr> {
    fn go<'a>(e: &'a mut Expr, index: &mut usize) -> Option<&'a mut Expr> {
        if *index == 0 {
            return Some(e);
        }
        *index -= 1;
        match e {
            Expr::Unary(_, a) | Expr::Call(_, a) => go(a, index),
            Expr::Binary(_, l, r) => match go(l, index) {
                Some(x) => Some(x),
                None => go(r, index),
            },
            _ => None,
        }
    }
    let mut index = index;
    go(e, &mut index)
}

/// Replaces one random node with a grammar-bounded variant of itself.
fn mutate_law(law: &LawCandidate, rng: &mut ChaCha8Rng) -> Option<LawCandidate> {
    let mut ast = law.ast.clone();
    let mut params = law.params.clone();
    let c = fresh_param(law);
    let idx = rng.random_range(0..ast.node_count());
    let node = subtree_mut(&mut ast, idx)?;
    let old = node.clone();
    let eps = Expr::var(STRAIN_VAR);
    let small = 0.1 * gauss(rng);
    let replacement = match (rng.random_range(0..6), &old) {
        (0, Expr::Number(x)) => {
            params.insert(c.clone(), *x);
            Expr::param(&c)
        }
        (0, Expr::Param(p)) => Expr::num(params.remove(p).unwrap_or(1.0)),
        (0 | 1, _) => {
            params.insert(c.clone(), small);
            Expr::bin(BinOp::Add, old, Expr::bin(BinOp::Mul, Expr::param(&c), eps))
        }
        (2, _) => {
            params.insert(c.clone(), small);
            let bump = Expr::bin(BinOp::Add, Expr::num(1.0), Expr::bin(BinOp::Mul, Expr::param(&c), eps));
            Expr::bin(BinOp::Mul, old, bump)
        }
        (3, _) => {
            params.insert(c.clone(), small);
            let sq = Expr::bin(BinOp::Pow, eps, Expr::num(2.0));
            Expr::bin(BinOp::Add, old, Expr::bin(BinOp::Mul, Expr::param(&c), sq))
        }
        (4, _) => {
            params.insert(c.clone(), 1.0);
            let inner = Expr::bin(BinOp::Div, old, Expr::param(&c));
            Expr::bin(BinOp::Mul, Expr::param(&c), Expr::call(Func::Tanh, inner))
        }
        _ => {
            params.insert(c.clone(), small);
            let cube = Expr::bin(BinOp::Pow, eps, Expr::num(3.0));
            Expr::bin(BinOp::Add, old, Expr::bin(BinOp::Mul, Expr::param(&c), cube))
        }
    };
    *node = replacement;
    if ast.node_count() > MAX_LAW_NODES || ast.depth() > MAX_LAW_DEPTH {
        return None;
    }
    let live: HashSet<String> = ast.params().into_iter().collect();
    params.retain(|k, _| live.contains(k));
    Some(LawCandidate::from_ast(ast, params))
}

/// Per-value Gaussian jitter of the best prediction set, std scaled by
/// `temp`, applied to a random half of the molecules.
fn molecule(traj: &Trajectory, temp: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Solution> {
    let Some(&(Solution::PropertyValues(best), _)) = ranked(traj).first() else {
        return Vec::new();
    };
    let sigma = temp.max(MIN_JITTER);
    let mut seen = seen_set(traj);
    let mut out = Vec::new();
    for _ in 0..n {
        let vals: BTreeMap<String, f64> = best
            .iter()
            .map(|(k, v)| {
                let moved = rng.random::<bool>();
                let d = gauss(rng) * sigma;
                (k.clone(), if moved { v + d } else { *v })
            })
            .collect();
        let c = Solution::PropertyValues(vals);
        if seen.insert(c.descriptor()) {
            out.push(c);
        }
    }
    out
}
