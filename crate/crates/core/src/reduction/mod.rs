//! Gang/vector reduction model, its serial oracle, and the race detector.
//!
//! Iterations are block-distributed over gangs (the last gang takes the
//! remainder). Each gang folds its block in index order into a private
//! accumulator that starts at the operator's identity. In the default mode
//! the gang partials are combined with a pairwise tree; the deterministic
//! mode discards them and folds the whole input serially, so its result does
//! not depend on the configuration.

mod race;

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::dsl::{ElemKind, Literal, ReduceOp};

pub use race::{detect_races, BodyAccess, Conflict, ConflictReport, Finding, LoopLevel, LoopSpec, ParLevel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Num {
    Int(i64),
    Real(f64),
}

impl Num {
    pub fn bits(self) -> u64 {
        match self {
            Num::Int(v) => v as u64,
            Num::Real(v) => v.to_bits(),
        }
    }

    pub fn bit_eq(self, other: Num) -> bool {
        std::mem::discriminant(&self) == std::mem::discriminant(&other) && self.bits() == other.bits()
    }

    /// Converts a literal to `kind`; ints widen to reals.
    pub fn from_literal(lit: Literal, kind: ElemKind) -> Option<Num> {
        match (lit, kind) {
            (Literal::Int(v), ElemKind::Int) => Some(Num::Int(v)),
            (Literal::Int(v), ElemKind::Real) => Some(Num::Real(v as f64)),
            (Literal::Real(v), ElemKind::Real) => Some(Num::Real(v)),
            (Literal::Real(_), ElemKind::Int) => None,
        }
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Int(v) => write!(f, "{v}"),
            Num::Real(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub num_gangs: usize,
    pub vector_length: usize,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Scalar,
    /// Reduce a row-major matrix along `dim`, keeping the other dimension.
    Array { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReductionSpec {
    pub op: ReduceOp,
    pub target: Target,
    pub kind: ElemKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReductionError {
    #[error("reduction dimension {dim} out of range for a rank-2 input")]
    DimOutOfRange { dim: usize },
    #[error("matrix rows have different lengths")]
    Ragged,
    #[error("configuration needs at least one gang and one vector lane")]
    EmptyConfig,
}

pub fn identity(op: ReduceOp, kind: ElemKind) -> Num {
    match (op, kind) {
        (ReduceOp::Sum, ElemKind::Int) => Num::Int(0),
        (ReduceOp::Sum, ElemKind::Real) => Num::Real(0.0),
        (ReduceOp::Product, ElemKind::Int) => Num::Int(1),
        (ReduceOp::Product, ElemKind::Real) => Num::Real(1.0),
        (ReduceOp::Max, ElemKind::Int) => Num::Int(i64::MIN),
        (ReduceOp::Max, ElemKind::Real) => Num::Real(f64::NEG_INFINITY),
        (ReduceOp::Min, ElemKind::Int) => Num::Int(i64::MAX),
        (ReduceOp::Min, ElemKind::Real) => Num::Real(f64::INFINITY),
    }
}

/// `a op b`. Integer arithmetic wraps; max/min keep `a` on ties.
pub fn apply(op: ReduceOp, a: Num, b: Num) -> Num {
    match (a, b) {
        (Num::Int(x), Num::Int(y)) => Num::Int(match op {
            ReduceOp::Sum => x.wrapping_add(y),
            ReduceOp::Product => x.wrapping_mul(y),
            ReduceOp::Max => x.max(y),
            ReduceOp::Min => x.min(y),
        }),
        (Num::Real(x), Num::Real(y)) => Num::Real(match op {
            ReduceOp::Sum => x + y,
            ReduceOp::Product => x * y,
            ReduceOp::Max => {
                if y > x {
                    y
                } else {
                    x
                }
            }
            ReduceOp::Min => {
                if y < x {
                    y
                } else {
                    x
                }
            }
        }),
        _ => panic!("mixed element kinds in a reduction"),
    }
}

fn fold(op: ReduceOp, kind: ElemKind, values: impl IntoIterator<Item = Num>) -> Num {
    values.into_iter().fold(identity(op, kind), |acc, v| apply(op, acc, v))
}

/// Left-to-right fold from the identity. Empty input gives the identity.
pub fn serial_oracle(op: ReduceOp, kind: ElemKind, values: &[Num]) -> Num {
    fold(op, kind, values.iter().copied())
}

fn check_matrix(matrix: &[Vec<Num>], dim: usize) -> Result<(usize, usize), ReductionError> {
    if dim > 1 {
        return Err(ReductionError::DimOutOfRange { dim });
    }
    let cols = matrix.first().map_or(0, Vec::len);
    if matrix.iter().any(|r| r.len() != cols) {
        return Err(ReductionError::Ragged);
    }
    Ok((matrix.len(), cols))
}

/// Serial elementwise reduction of `matrix` along `dim`.
pub fn serial_oracle_array(
    op: ReduceOp,
    kind: ElemKind,
    matrix: &[Vec<Num>],
    dim: usize,
) -> Result<Vec<Num>, ReductionError> {
    let (rows, cols) = check_matrix(matrix, dim)?;
    Ok(if dim == 0 {
        (0..cols).map(|j| fold(op, kind, (0..rows).map(|i| matrix[i][j]))).collect()
    } else {
        (0..rows).map(|i| fold(op, kind, (0..cols).map(|j| matrix[i][j]))).collect()
    })
}

/// Contiguous blocks of `0..n`, one per gang; the last gang takes the remainder.
pub fn partition(n: usize, gangs: usize) -> Vec<Range<usize>> {
    let gangs = gangs.max(1);
    let block = n / gangs;
    (0..gangs)
        .map(|g| {
            let start = g * block;
            let end = if g + 1 == gangs { n } else { start + block };
            start..end
        })
        .collect()
}

fn symbol(op: ReduceOp) -> &'static str {
    match op {
        ReduceOp::Sum => "+",
        ReduceOp::Product => "*",
        ReduceOp::Max => "max",
        ReduceOp::Min => "min",
    }
}

/// Pairwise tree over the partials: with `s` the largest power of two below
/// the live count, slot `i` absorbs slot `i + s`. Returns the result and the
/// grouping it used, written over `g0..gN` with `sym` as the operator.
fn tree_combine<T: Clone>(mut parts: Vec<T>, sym: &str, mut combine: impl FnMut(&T, &T) -> T) -> (Option<T>, String) {
    let mut names: Vec<String> = (0..parts.len()).map(|g| format!("g{g}")).collect();
    let mut live = parts.len();
    while live > 1 {
        let s = live.next_power_of_two() / 2;
        for i in 0..live - s {
            parts[i] = combine(&parts[i], &parts[i + s]);
            names[i] = format!("({} {sym} {})", names[i], names[i + s]);
        }
        live = s;
    }
    (parts.into_iter().next(), names.into_iter().next().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarOutcome {
    pub value: Num,
    pub oracle: Num,
    pub partials: Vec<Num>,
    /// How the gang partials were combined, e.g. `((g0 + g2) + g1)`;
    /// `serial` in deterministic mode.
    pub grouping: String,
}

impl ScalarOutcome {
    pub fn bitwise_equal(&self) -> bool {
        self.value.bit_eq(self.oracle)
    }
}

pub fn run_scalar_reduction(
    config: ExecConfig,
    spec: ReductionSpec,
    values: &[Num],
) -> Result<ScalarOutcome, ReductionError> {
    if config.num_gangs == 0 || config.vector_length == 0 {
        return Err(ReductionError::EmptyConfig);
    }
    let oracle = serial_oracle(spec.op, spec.kind, values);
    let partials: Vec<Num> = partition(values.len(), config.num_gangs)
        .into_iter()
        .map(|r| serial_oracle(spec.op, spec.kind, &values[r]))
        .collect();
    if config.deterministic {
        return Ok(ScalarOutcome {
            value: oracle,
            oracle,
            partials,
            grouping: "serial".into(),
        });
    }
    let (value, grouping) = tree_combine(partials.clone(), symbol(spec.op), |a, b| apply(spec.op, *a, *b));
    Ok(ScalarOutcome {
        value: value.expect("at least one gang"),
        oracle,
        partials,
        grouping,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayOutcome {
    pub value: Vec<Num>,
    pub oracle: Vec<Num>,
    pub grouping: String,
}

impl ArrayOutcome {
    pub fn bitwise_equal(&self) -> bool {
        self.value.len() == self.oracle.len() && self.value.iter().zip(&self.oracle).all(|(a, b)| a.bit_eq(*b))
    }
}

/// Reduces along `dim`: iterations over that dimension are distributed to
/// gangs, each gang keeps a private array of the kept extent.
pub fn run_array_reduction(
    config: ExecConfig,
    spec: ReductionSpec,
    matrix: &[Vec<Num>],
) -> Result<ArrayOutcome, ReductionError> {
    let Target::Array { dim } = spec.target else {
        return Err(ReductionError::DimOutOfRange { dim: usize::MAX });
    };
    if config.num_gangs == 0 || config.vector_length == 0 {
        return Err(ReductionError::EmptyConfig);
    }
    let oracle = serial_oracle_array(spec.op, spec.kind, matrix, dim)?;
    let (rows, cols) = check_matrix(matrix, dim)?;
    let (iters, kept) = if dim == 0 { (rows, cols) } else { (cols, rows) };
    let at = |it: usize, k: usize| if dim == 0 { matrix[it][k] } else { matrix[k][it] };
    if config.deterministic {
        return Ok(ArrayOutcome {
            value: oracle.clone(),
            oracle,
            grouping: "serial".into(),
        });
    }
    let partials: Vec<Vec<Num>> = partition(iters, config.num_gangs)
        .into_iter()
        .map(|r| {
            let mut acc = vec![identity(spec.op, spec.kind); kept];
            for it in r {
                for (k, slot) in acc.iter_mut().enumerate() {
                    *slot = apply(spec.op, *slot, at(it, k));
                }
            }
            acc
        })
        .collect();
    let (value, grouping) = tree_combine(partials, symbol(spec.op), |a, b| a.iter().zip(b).map(|(x, y)| apply(spec.op, *x, *y)).collect());
    Ok(ArrayOutcome {
        value: value.expect("at least one gang"),
        oracle,
        grouping,
    })
}
