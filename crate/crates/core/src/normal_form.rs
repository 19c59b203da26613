//! Reduction of a stochastic game with finite strategy supports to a
//! normal-form game, and exact mixed equilibria of small two-player
//! normal-form games by support enumeration.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::StochasticGame;
use crate::nash::joint_policy_evaluation;
use crate::strategy::KMemoryStrategy;

/// Largest support per agent accepted by [`find_mixed_ne_2p`].
pub const MAX_SUPPORT: usize = 4;

const NE_TOLERANCE: f64 = 1e-9;
const WEIGHT_FLOOR: f64 = -1e-10;

/// Payoffs of every agent for every choice of one strategy per agent.
/// Cells are stored row-major with agent 0's choice most significant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffTensor {
    pub shape: Vec<usize>,
    /// `[cell][agent]`
    pub cells: Vec<Vec<f64>>,
}

impl PayoffTensor {
    pub fn new(shape: Vec<usize>, cells: Vec<Vec<f64>>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 || cells.len() != n || cells.iter().any(|c| c.len() != shape.len()) {
            return Err(Error::mismatch("payoff cells do not match the tensor shape"));
        }
        Ok(PayoffTensor { shape, cells })
    }

    /// A two-player tensor from row and column payoff matrices.
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map(Vec::len).unwrap_or(0);
        if b.len() != rows || a.iter().chain(b).any(|r| r.len() != cols) {
            return Err(Error::mismatch("payoff matrices have different shapes"));
        }
        let cells = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| vec![a[i][j], b[i][j]]))
            .collect();
        PayoffTensor::new(vec![rows, cols], cells)
    }

    fn index(&self, choice: &[usize]) -> usize {
        choice.iter().zip(&self.shape).fold(0, |acc, (c, n)| acc * n + c)
    }

    pub fn payoff(&self, choice: &[usize], agent: usize) -> f64 {
        self.cells[self.index(choice)][agent]
    }
}

/// `u_i(π) = Σ_S d0(S)·V_i(⟨⟩, S)` for every profile drawn from `supports`.
pub fn reduced_normal_form(
    game: &StochasticGame,
    supports: &[Vec<KMemoryStrategy>],
    d0: &[f64],
    epsilon: f64,
) -> Result<PayoffTensor> {
    if supports.len() != game.n_agents() {
        return Err(Error::mismatch("one support per agent is required"));
    }
    if let Some(i) = supports.iter().position(Vec::is_empty) {
        return Err(Error::mismatch(format!("support of agent {i} is empty")));
    }
    if d0.len() != game.n_states() || d0.iter().any(|p| *p < 0.0) || (d0.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::mismatch("d0 must be a distribution over the game's states"));
    }
    let starts: Vec<usize> = (0..game.n_states()).filter(|&s| d0[s] > 0.0).collect();
    let game = game.with_initial_states(starts.clone())?;
    let k = supports.iter().flatten().map(|s| s.memory()).max().unwrap_or(0);
    let shape: Vec<usize> = supports.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let mut cells = Vec::with_capacity(total);
    let mut choice = vec![0usize; shape.len()];
    for _ in 0..total {
        let strategies: Vec<KMemoryStrategy> = choice.iter().zip(supports).map(|(&c, s)| s[c].clone()).collect();
        let profile = joint_policy_evaluation(&game, k, &strategies, epsilon)?;
        let roots = profile.root_values();
        cells.push(
            roots
                .iter()
                .map(|per_root| starts.iter().zip(per_root).map(|(&s, v)| d0[s] * v).sum())
                .collect(),
        );
        for pos in (0..choice.len()).rev() {
            choice[pos] += 1;
            if choice[pos] < shape[pos] {
                break;
            }
            choice[pos] = 0;
        }
    }
    PayoffTensor::new(shape, cells)
}

/// Mixture weights per agent at an equilibrium of the tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixedEquilibrium {
    pub weights: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect();
    all.sort_by_key(Vec::len);
    all
}

// Weights over `cols` making every row in `rows` of `m` equally good.
fn indifference(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Option<Vec<f64>> {
    let n_eq = rows.len() + 1;
    let n_var = cols.len() + 1;
    let mut sys = DMatrix::zeros(n_eq, n_var);
    let mut rhs = DVector::zeros(n_eq);
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            sys[(r, c)] = m[(i, j)];
        }
        sys[(r, cols.len())] = -1.0;
    }
    for c in 0..cols.len() {
        sys[(rows.len(), c)] = 1.0;
    }
    rhs[rows.len()] = 1.0;
    let x = sys.clone().svd(true, true).solve(&rhs, 1e-14).ok()?;
    if (&sys * &x - &rhs).amax() > NE_TOLERANCE {
        return None;
    }
    let w: Vec<f64> = x.iter().take(cols.len()).copied().collect();
    if w.iter().any(|&p| p < WEIGHT_FLOOR) {
        return None;
    }
    Some(w)
}

fn spread(support: &[usize], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&i, &p) in support.iter().zip(w) {
        out[i] = p.max(0.0);
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Support enumeration for two agents with at most [`MAX_SUPPORT`]
/// strategies each. Smaller supports are tried first, so a pure
/// equilibrium is returned whenever one exists.
pub fn find_mixed_ne_2p(tensor: &PayoffTensor) -> Result<MixedEquilibrium> {
    if tensor.shape.len() != 2 {
        return Err(Error::mismatch("support enumeration needs exactly two agents"));
    }
    let (n0, n1) = (tensor.shape[0], tensor.shape[1]);
    if n0 > MAX_SUPPORT || n1 > MAX_SUPPORT {
        return Err(Error::mismatch(format!("supports are limited to {MAX_SUPPORT} strategies per agent")));
    }
    let a = DMatrix::from_fn(n0, n1, |i, j| tensor.payoff(&[i, j], 0));
    // Agent 1's payoffs with its own strategies as rows.
    let bt = DMatrix::from_fn(n1, n0, |j, i| tensor.payoff(&[i, j], 1));
    let rows_all = subsets(n0);
    let cols_all = subsets(n1);
    let mut pairs: Vec<(&Vec<usize>, &Vec<usize>)> =
        rows_all.iter().flat_map(|r| cols_all.iter().map(move |c| (r, c))).collect();
    pairs.sort_by_key(|(r, c)| (r.len() + c.len(), r.len().abs_diff(c.len())));
    for (rows, cols) in pairs {
        let Some(y) = indifference(&a, rows, cols) else { continue };
        let Some(x) = indifference(&bt, cols, rows) else { continue };
        let x = spread(rows, &x, n0);
        let y = spread(cols, &y, n1);
        let (xv, yv) = (DVector::from_vec(x.clone()), DVector::from_vec(y.clone()));
        let row_payoffs = &a * &yv;
        let col_payoffs = &bt * &xv;
        let v0 = xv.dot(&row_payoffs);
        let v1 = yv.dot(&col_payoffs);
        if row_payoffs.max() <= v0 + NE_TOLERANCE && col_payoffs.max() <= v1 + NE_TOLERANCE {
            return Ok(MixedEquilibrium {
                weights: vec![x, y],
                values: vec![v0, v1],
            });
        }
    }
    Err(Error::NoSolution("support enumeration found no equilibrium".into()))
}
