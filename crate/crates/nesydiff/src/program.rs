//! Symbolic programs: deterministic maps from complete concept sequences to
//! complete output sequences.
//!
//! Programs are pure and total on valid inputs. `eval_carryover` wraps any
//! program for partially generated outputs: positions already revealed in the
//! output are copied through unchanged, the rest come from the program.

use crate::diffusion::MaskedSeq;
use crate::error::{Error, Result};

pub trait Program {
    /// Concept sequence length `W`.
    fn concept_dims(&self) -> usize;
    /// Concept vocabulary size `V_c` (semantic values `0..V_c`).
    fn concept_vocab(&self) -> u32;
    /// Output sequence length `Y`.
    fn output_dims(&self) -> usize;
    /// Output vocabulary size `V_y`.
    fn output_vocab(&self) -> u32;
    /// Maps a complete concept sequence to a complete output sequence.
    fn eval(&self, w: &MaskedSeq) -> Result<MaskedSeq>;
}

pub(crate) fn check_concepts(prog: &dyn Program, w: &MaskedSeq) -> Result<()> {
    if w.len() != prog.concept_dims() || w.vocab() != prog.concept_vocab() {
        return Err(Error::shape(format!(
            "concept sequence is {}x{}, program wants {}x{}",
            w.len(),
            w.vocab(),
            prog.concept_dims(),
            prog.concept_vocab()
        )));
    }
    if !w.is_complete() {
        return Err(Error::domain("program input must be complete"));
    }
    Ok(())
}

/// Program output with carry-over: positions unmasked in `y_partial` keep
/// their value, masked positions are filled from `eval(w)`.
pub fn eval_carryover(
    prog: &dyn Program,
    w: &MaskedSeq,
    y_partial: &MaskedSeq,
) -> Result<MaskedSeq> {
    if y_partial.len() != prog.output_dims() || y_partial.vocab() != prog.output_vocab() {
        return Err(Error::shape(format!(
            "output sequence is {}x{}, program emits {}x{}",
            y_partial.len(),
            y_partial.vocab(),
            prog.output_dims(),
            prog.output_vocab()
        )));
    }
    let mut y = prog.eval(w)?;
    for i in 0..y.len() {
        if !y_partial.is_masked(i) {
            y.set(i, y_partial.tok(i));
        }
    }
    Ok(y)
}

/// Pairwise inequality over a chain of binary concepts: output position `i`
/// is 1 when concepts `i` and `i + 1` differ. With two concepts this is a
/// single exclusive-or bit.
#[derive(Clone, Debug)]
pub struct XorChain {
    dims: usize,
}

impl XorChain {
    pub fn new(dims: usize) -> Result<Self> {
        if dims < 2 {
            return Err(Error::domain(format!("xor chain needs >= 2 concepts, got {dims}")));
        }
        Ok(XorChain { dims })
    }
}

impl Program for XorChain {
    fn concept_dims(&self) -> usize {
        self.dims
    }
    fn concept_vocab(&self) -> u32 {
        2
    }
    fn output_dims(&self) -> usize {
        self.dims - 1
    }
    fn output_vocab(&self) -> u32 {
        2
    }
    fn eval(&self, w: &MaskedSeq) -> Result<MaskedSeq> {
        check_concepts(self, w)?;
        let bits = w.values()?;
        let out: Vec<u32> = bits.windows(2).map(|p| u32::from(p[0] != p[1])).collect();
        MaskedSeq::from_values(2, &out)
    }
}

/// Base-10 addition of two `n`-digit numbers, most significant digit first.
/// Concepts are the `2n` operand digits; the output is the `n + 1` digit sum
/// (leading digit 0 or 1).
#[derive(Clone, Debug)]
pub struct DigitAddition {
    digits_per_operand: usize,
}

impl DigitAddition {
    pub fn new(digits_per_operand: usize) -> Result<Self> {
        if digits_per_operand == 0 {
            return Err(Error::domain("addition needs >= 1 digit per operand"));
        }
        Ok(DigitAddition { digits_per_operand })
    }

    pub fn digits_per_operand(&self) -> usize {
        self.digits_per_operand
    }
}

impl Program for DigitAddition {
    fn concept_dims(&self) -> usize {
        2 * self.digits_per_operand
    }
    fn concept_vocab(&self) -> u32 {
        10
    }
    fn output_dims(&self) -> usize {
        self.digits_per_operand + 1
    }
    fn output_vocab(&self) -> u32 {
        10
    }
    fn eval(&self, w: &MaskedSeq) -> Result<MaskedSeq> {
        check_concepts(self, w)?;
        let n = self.digits_per_operand;
        let digits = w.values()?;
        let (a, b) = digits.split_at(n);
        // Schoolbook addition from the least significant digit.
        let mut out = vec![0u32; n + 1];
        let mut carry = 0u32;
        for i in (0..n).rev() {
            let s = a[i] + b[i] + carry;
            out[i + 1] = s % 10;
            carry = s / 10;
        }
        out[0] = carry;
        MaskedSeq::from_values(10, &out)
    }
}

/// Conjunctive normal form over binary concepts: each output position is the
/// truth value of one clause. A literal `+k` reads concept `k - 1` as true
/// when its value is 1; `-k` negates it.
#[derive(Clone, Debug)]
pub struct Cnf {
    dims: usize,
    clauses: Vec<Vec<i32>>,
}

impl Cnf {
    pub fn new(dims: usize, clauses: Vec<Vec<i32>>) -> Result<Self> {
        if dims == 0 || clauses.is_empty() {
            return Err(Error::domain("cnf needs >= 1 concept and >= 1 clause"));
        }
        for (ci, clause) in clauses.iter().enumerate() {
            if clause.is_empty() {
                return Err(Error::domain(format!("clause {ci} is empty")));
            }
            for &lit in clause {
                let var = lit.unsigned_abs() as usize;
                if lit == 0 || var > dims {
                    return Err(Error::domain(format!(
                        "clause {ci}: literal {lit} outside +-1..={dims}"
                    )));
                }
            }
        }
        Ok(Cnf { dims, clauses })
    }

    pub fn clauses(&self) -> &[Vec<i32>] {
        &self.clauses
    }
}

impl Program for Cnf {
    fn concept_dims(&self) -> usize {
        self.dims
    }
    fn concept_vocab(&self) -> u32 {
        2
    }
    fn output_dims(&self) -> usize {
        self.clauses.len()
    }
    fn output_vocab(&self) -> u32 {
        2
    }
    fn eval(&self, w: &MaskedSeq) -> Result<MaskedSeq> {
        check_concepts(self, w)?;
        let bits = w.values()?;
        let out: Vec<u32> = self
            .clauses
            .iter()
            .map(|clause| {
                let sat = clause.iter().any(|&lit| {
                    let val = bits[lit.unsigned_abs() as usize - 1] == 1;
                    if lit > 0 {
                        val
                    } else {
                        !val
                    }
                });
                u32::from(sat)
            })
            .collect();
        MaskedSeq::from_values(2, &out)
    }
}

/// Square grid for path planning. Cells carry an index into `costs`;
/// entering a cell pays its cost, and the start cell's cost is included.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub side: usize,
    pub costs: Vec<f64>,
    pub eight_connected: bool,
}

impl GridSpec {
    /// The cost table used by the synthetic planning task.
    pub const DEFAULT_COSTS: [f64; 5] = [0.8, 1.2, 5.3, 7.7, 9.2];

    pub fn new(side: usize, costs: Vec<f64>, eight_connected: bool) -> Result<Self> {
        if side < 2 {
            return Err(Error::domain(format!("grid side must be >= 2, got {side}")));
        }
        if costs.is_empty() {
            return Err(Error::domain("cost table is empty"));
        }
        for (i, &c) in costs.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::domain(format!(
                    "cost {i} is {c}, want finite positive"
                )));
            }
        }
        Ok(GridSpec {
            side,
            costs,
            eight_connected,
        })
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    /// Neighbor cells of `cell`, ascending by index.
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        let n = self.side as isize;
        let (r, c) = ((cell / self.side) as isize, (cell % self.side) as isize);
        let mut out = Vec::with_capacity(8);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                if !self.eight_connected && dr != 0 && dc != 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if (0..n).contains(&nr) && (0..n).contains(&nc) {
                    out.push((nr * n + nc) as usize);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn check_cost_indices(&self, cost_idx: &[u32]) -> Result<()> {
        if cost_idx.len() != self.cells() {
            return Err(Error::shape(format!(
                "{} cost indices for a grid of {} cells",
                cost_idx.len(),
                self.cells()
            )));
        }
        for (i, &k) in cost_idx.iter().enumerate() {
            if k as usize >= self.costs.len() {
                return Err(Error::domain(format!(
                    "cost index {k} at cell {i} outside 0..{}",
                    self.costs.len()
                )));
            }
        }
        Ok(())
    }

    /// Total cost of a cell path, start cell included.
    pub fn path_cost(&self, cost_idx: &[u32], path: &[usize]) -> Result<f64> {
        self.check_cost_indices(cost_idx)?;
        let mut total = 0.0;
        for &cell in path {
            if cell >= self.cells() {
                return Err(Error::domain(format!("cell {cell} outside the grid")));
            }
            total += self.costs[cost_idx[cell] as usize];
        }
        Ok(total)
    }
}

/// Least-cost path from the top-left to the bottom-right cell. Ties are
/// broken toward the lexicographically smallest predecessor, so the result
/// is deterministic. Returns the cell indices along the path, start first.
pub fn dijkstra_path(spec: &GridSpec, cost_idx: &[u32]) -> Result<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    spec.check_cost_indices(cost_idx)?;
    let cells = spec.cells();
    let goal = cells - 1;
    let cost_of = |cell: usize| spec.costs[cost_idx[cell] as usize];

    let mut dist = vec![f64::INFINITY; cells];
    let mut pred = vec![usize::MAX; cells];
    let mut done = vec![false; cells];
    // Heap orders by (distance, cell); equal distances pop the smaller cell.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let key = |d: f64| d.to_bits(); // nonnegative finite f64 orders like its bits

    dist[0] = cost_of(0);
    heap.push(Reverse((key(dist[0]), 0)));
    while let Some(Reverse((_, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == goal {
            break;
        }
        for v in spec.neighbors(u) {
            if done[v] {
                continue;
            }
            let nd = dist[u] + cost_of(v);
            if nd < dist[v] || (nd == dist[v] && u < pred[v]) {
                dist[v] = nd;
                pred[v] = u;
                heap.push(Reverse((key(nd), v)));
            }
        }
    }

    let mut path = vec![goal];
    let mut cur = goal;
    while cur != 0 {
        cur = pred[cur];
        path.push(cur);
    }
    path.reverse();
    Ok(path)
}

/// Shortest-path planning as a program: concepts are per-cell cost indices,
/// the output marks the cells of the least-cost path with 1.
#[derive(Clone, Debug)]
pub struct GridShortestPath {
    spec: GridSpec,
}

impl GridShortestPath {
    pub fn new(spec: GridSpec) -> Self {
        GridShortestPath { spec }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

impl Program for GridShortestPath {
    fn concept_dims(&self) -> usize {
        self.spec.cells()
    }
    fn concept_vocab(&self) -> u32 {
        self.spec.costs.len() as u32
    }
    fn output_dims(&self) -> usize {
        self.spec.cells()
    }
    fn output_vocab(&self) -> u32 {
        2
    }
    fn eval(&self, w: &MaskedSeq) -> Result<MaskedSeq> {
        check_concepts(self, w)?;
        let cost_idx = w.values()?;
        let path = dijkstra_path(&self.spec, &cost_idx)?;
        let mut out = vec![0u32; self.spec.cells()];
        for cell in path {
            out[cell] = 1;
        }
        MaskedSeq::from_values(2, &out)
    }
}
