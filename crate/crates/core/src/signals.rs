//! Sequence containers, block-Hankel matrices, persistence of excitation,
//! the extended (non-minimal) state, and the trajectory-membership test.
//!
//! All functions here are pure; none hold shared mutable state.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug)]
pub enum SignalError {
    /// A sequence was empty where at least one element is required.
    EmptySequence,
    /// Requested Hankel window depth exceeds the sequence length.
    WindowTooDeep { depth: usize, len: usize },
    /// An element of a sequence does not have the expected dimension.
    ShapeMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    /// Window bounds outside the sequence, or reversed.
    IndexOutOfRange { a: usize, b: usize, len: usize },
    /// A history is shorter than the requested number of past steps.
    InsufficientHistory { have: usize, need: usize },
    /// Data trajectory and candidate disagree on input/output dimensions.
    DimensionMismatch { what: &'static str },
    /// Trajectory invariant violated at construction.
    InvalidTrajectory(String),
    /// CSV read/write failure.
    Csv(String),
}

impl fmt::Display for SignalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalError::EmptySequence => write!(f, "sequence is empty"),
            SignalError::WindowTooDeep { depth, len } => {
                write!(f, "window depth {depth} exceeds sequence length {len}")
            }
            SignalError::ShapeMismatch {
                index,
                expected,
                got,
            } => write!(
                f,
                "element {index} has dimension {got}, expected {expected}"
            ),
            SignalError::IndexOutOfRange { a, b, len } => {
                write!(f, "window [{a}, {b}] invalid for sequence of length {len}")
            }
            SignalError::InsufficientHistory { have, need } => {
                write!(f, "history has {have} steps, need at least {need}")
            }
            SignalError::DimensionMismatch { what } => {
                write!(f, "dimension mismatch: {what}")
            }
            SignalError::InvalidTrajectory(msg) => write!(f, "invalid trajectory: {msg}"),
            SignalError::Csv(msg) => write!(f, "csv error: {msg}"),
        }
    }
}

impl std::error::Error for SignalError {}

/// One measured input-output trajectory.
///
/// `y` holds the outputs the controller sees. When the trajectory was
/// generated with measurement noise, `y_clean` keeps the noise-free outputs
/// alongside so experiments can compare against ground truth.
#[derive(Debug, Clone)]
pub struct TrajectoryData {
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    y_clean: Option<Vec<DVector<f64>>>,
    noise_bound: Option<f64>,
    m: usize,
    p: usize,
}

impl TrajectoryData {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self, SignalError> {
        if u.is_empty() || y.is_empty() {
            return Err(SignalError::EmptySequence);
        }
        if u.len() != y.len() {
            return Err(SignalError::InvalidTrajectory(format!(
                "input length {} != output length {}",
                u.len(),
                y.len()
            )));
        }
        let m = u[0].len();
        let p = y[0].len();
        check_uniform_dims(&u, m)?;
        check_uniform_dims(&y, p)?;
        if m == 0 || p == 0 {
            return Err(SignalError::InvalidTrajectory(
                "zero input or output dimension".into(),
            ));
        }
        Ok(Self {
            u,
            y,
            y_clean: None,
            noise_bound: None,
            m,
            p,
        })
    }

    /// Attaches the noise-free outputs this noisy trajectory was built from.
    pub fn with_clean_outputs(
        mut self,
        y_clean: Vec<DVector<f64>>,
        noise_bound: f64,
    ) -> Result<Self, SignalError> {
        if y_clean.len() != self.len() {
            return Err(SignalError::InvalidTrajectory(
                "clean output length differs from trajectory length".into(),
            ));
        }
        check_uniform_dims(&y_clean, self.p)?;
        self.y_clean = Some(y_clean);
        self.noise_bound = Some(noise_bound);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.u
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn clean_outputs(&self) -> Option<&[DVector<f64>]> {
        self.y_clean.as_deref()
    }

    pub fn noise_bound(&self) -> Option<f64> {
        self.noise_bound
    }

    /// Writes the trajectory as CSV: `t, u_0.., y_0..` plus `y_clean_0..`
    /// columns when noise-free outputs are attached. Header row mandatory.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), SignalError> {
        let mut wtr = csv::Writer::from_writer(sink);
        let mut header = vec!["t".to_string()];
        for j in 0..self.m {
            header.push(format!("u_{j}"));
        }
        for j in 0..self.p {
            header.push(format!("y_{j}"));
        }
        if self.y_clean.is_some() {
            for j in 0..self.p {
                header.push(format!("y_clean_{j}"));
            }
        }
        wtr.write_record(&header).map_err(csv_err)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            for v in self.u[t].iter() {
                rec.push(fmt_f64(*v));
            }
            for v in self.y[t].iter() {
                rec.push(fmt_f64(*v));
            }
            if let Some(clean) = &self.y_clean {
                for v in clean[t].iter() {
                    rec.push(fmt_f64(*v));
                }
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| SignalError::Csv(e.to_string()))
    }

    /// Reads a trajectory from CSV written by [`TrajectoryData::write_csv`].
    /// Dimensions are inferred from the header.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, SignalError> {
        let mut rdr = csv::Reader::from_reader(source);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names.first() != Some(&"t") {
            return Err(SignalError::Csv("first column must be `t`".into()));
        }
        let m = names.iter().filter(|n| n.starts_with("u_")).count();
        let p = names
            .iter()
            .filter(|n| n.starts_with("y_") && !n.starts_with("y_clean_"))
            .count();
        let clean = names.iter().filter(|n| n.starts_with("y_clean_")).count();
        if m == 0 || p == 0 {
            return Err(SignalError::Csv("missing u_* or y_* columns".into()));
        }
        if clean != 0 && clean != p {
            return Err(SignalError::Csv(
                "y_clean_* column count differs from y_*".into(),
            ));
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        let mut y_clean = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let parse = |i: usize| -> Result<f64, SignalError> {
                rec.get(i)
                    .ok_or_else(|| SignalError::Csv(format!("missing column {i}")))?
                    .trim()
                    .parse()
                    .map_err(|e| SignalError::Csv(format!("bad number in column {i}: {e}")))
            };
            u.push(DVector::from_fn(m, |j, _| parse(1 + j).unwrap_or(f64::NAN)));
            y.push(DVector::from_fn(p, |j, _| {
                parse(1 + m + j).unwrap_or(f64::NAN)
            }));
            if clean > 0 {
                y_clean.push(DVector::from_fn(p, |j, _| {
                    parse(1 + m + p + j).unwrap_or(f64::NAN)
                }));
            }
            if u.last().unwrap().iter().any(|v| v.is_nan())
                || y.last().unwrap().iter().any(|v| v.is_nan())
            {
                return Err(SignalError::Csv(format!(
                    "non-numeric entry at row {}",
                    u.len()
                )));
            }
        }
        let traj = TrajectoryData::new(u, y)?;
        if clean > 0 {
            let bound = traj
                .y
                .iter()
                .zip(&y_clean)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            traj.with_clean_outputs(y_clean, bound)
        } else {
            Ok(traj)
        }
    }
}

fn check_uniform_dims(seq: &[DVector<f64>], dim: usize) -> Result<(), SignalError> {
    for (i, v) in seq.iter().enumerate() {
        if v.len() != dim {
            return Err(SignalError::ShapeMismatch {
                index: i,
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> SignalError {
    SignalError::Csv(e.to_string())
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips; keeps files byte-stable.
    format!("{v}")
}

/// Block-Hankel arrangement of a vector sequence.
///
/// For a sequence `s_0, ..., s_{N-1}` with per-step dimension `q` and window
/// depth `L`, the matrix has `qL` rows and `N-L+1` columns, and block `(i, j)`
/// equals `s_{i+j}`.
#[derive(Debug, Clone)]
pub struct HankelMatrix {
    entries: DMatrix<f64>,
    depth: usize,
    block_dim: usize,
}

impl HankelMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Block `(i, j)`, a view of rows `i*q .. (i+1)*q` in column `j`.
    pub fn block(&self, i: usize, j: usize) -> DVector<f64> {
        let q = self.block_dim;
        DVector::from_iterator(q, (0..q).map(|r| self.entries[(i * q + r, j)]))
    }
}

/// Builds the depth-`L` block-Hankel matrix of a sequence.
pub fn build_hankel(seq: &[DVector<f64>], depth: usize) -> Result<HankelMatrix, SignalError> {
    if seq.is_empty() {
        return Err(SignalError::EmptySequence);
    }
    let n = seq.len();
    if depth == 0 || depth > n {
        return Err(SignalError::WindowTooDeep { depth, len: n });
    }
    let q = seq[0].len();
    check_uniform_dims(seq, q)?;
    let cols = n - depth + 1;
    let mut entries = DMatrix::zeros(q * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            entries
                .view_mut((i * q, j), (q, 1))
                .copy_from(&seq[i + j]);
        }
    }
    Ok(HankelMatrix {
        entries,
        depth,
        block_dim: q,
    })
}

/// Diagnostic returned by [`is_persistently_exciting`].
#[derive(Debug, Clone)]
pub struct PeReport {
    pub satisfied: bool,
    pub order: usize,
    pub rank: usize,
    pub required_rank: usize,
    pub min_singular_value: f64,
}

/// Checks persistence of excitation of the given order: the depth-`order`
/// Hankel matrix must have full row rank `q * order`.
///
/// Rank is judged against singular values exceeding `tol` times the largest
/// one. An order too deep for the sequence is reported as not exciting
/// rather than as an error.
pub fn is_persistently_exciting(
    seq: &[DVector<f64>],
    order: usize,
    tol: f64,
) -> Result<PeReport, SignalError> {
    if seq.is_empty() {
        return Err(SignalError::EmptySequence);
    }
    let q = seq[0].len();
    check_uniform_dims(seq, q)?;
    let required_rank = q * order;
    if order == 0 || order > seq.len() {
        return Ok(PeReport {
            satisfied: false,
            order,
            rank: 0,
            required_rank,
            min_singular_value: 0.0,
        });
    }
    let hankel = build_hankel(seq, order)?;
    let svd = hankel.entries.clone().svd(false, false);
    let sv = &svd.singular_values;
    let max_sv = sv.iter().cloned().fold(0.0, f64::max);
    let rank = if max_sv == 0.0 {
        0
    } else {
        sv.iter().filter(|s| **s > tol * max_sv).count()
    };
    // Smallest of the first `required_rank` singular values; 0 when the
    // matrix cannot even have that many.
    let min_singular_value = if sv.len() >= required_rank && required_rank > 0 {
        sv[required_rank - 1]
    } else {
        0.0
    };
    Ok(PeReport {
        satisfied: rank == required_rank,
        order,
        rank,
        required_rank,
        min_singular_value,
    })
}

/// Stacks `seq[a..=b]` into a single vector in increasing time order.
pub fn extract_window(
    seq: &[DVector<f64>],
    a: usize,
    b: usize,
) -> Result<DVector<f64>, SignalError> {
    if a > b || b >= seq.len() {
        return Err(SignalError::IndexOutOfRange {
            a,
            b,
            len: seq.len(),
        });
    }
    let q = seq[a].len();
    check_uniform_dims(&seq[a..=b], q)?;
    let steps = b - a + 1;
    let mut out = DVector::zeros(q * steps);
    for (k, v) in seq[a..=b].iter().enumerate() {
        out.view_mut((k * q, 0), (q, 1)).copy_from(v);
    }
    Ok(out)
}

/// Extended non-minimal state: the last `n` inputs stacked above the last
/// `n` outputs, each in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    u_past: DVector<f64>,
    y_past: DVector<f64>,
    n: usize,
    m: usize,
    p: usize,
}

impl ExtendedState {
    /// Builds the extended state from full histories, taking the last `n`
    /// steps of each.
    pub fn from_histories(
        u_hist: &[DVector<f64>],
        y_hist: &[DVector<f64>],
        n: usize,
    ) -> Result<Self, SignalError> {
        if n == 0 {
            return Err(SignalError::InsufficientHistory { have: 0, need: 1 });
        }
        if u_hist.len() < n {
            return Err(SignalError::InsufficientHistory {
                have: u_hist.len(),
                need: n,
            });
        }
        if y_hist.len() < n {
            return Err(SignalError::InsufficientHistory {
                have: y_hist.len(),
                need: n,
            });
        }
        let u_tail = &u_hist[u_hist.len() - n..];
        let y_tail = &y_hist[y_hist.len() - n..];
        let m = u_tail[0].len();
        let p = y_tail[0].len();
        check_uniform_dims(u_tail, m)?;
        check_uniform_dims(y_tail, p)?;
        Ok(Self {
            u_past: extract_window(u_tail, 0, n - 1)?,
            y_past: extract_window(y_tail, 0, n - 1)?,
            n,
            m,
            p,
        })
    }

    /// Reconstructs an extended state from its stacked vector form.
    pub fn from_vector(xi: &DVector<f64>, m: usize, p: usize, n: usize) -> Result<Self, SignalError> {
        if xi.len() != (m + p) * n {
            return Err(SignalError::DimensionMismatch {
                what: "stacked vector length is not (m+p)n",
            });
        }
        Ok(Self {
            u_past: xi.rows(0, m * n).into_owned(),
            y_past: xi.rows(m * n, p * n).into_owned(),
            n,
            m,
            p,
        })
    }

    pub fn zero(m: usize, p: usize, n: usize) -> Self {
        Self {
            u_past: DVector::zeros(m * n),
            y_past: DVector::zeros(p * n),
            n,
            m,
            p,
        }
    }

    pub fn order_bound(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn u_past(&self) -> &DVector<f64> {
        &self.u_past
    }

    pub fn y_past(&self) -> &DVector<f64> {
        &self.y_past
    }

    /// Stacked vector, input block above output block; dimension `(m+p)n`.
    pub fn vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.u_past.len() + self.y_past.len());
        out.view_mut((0, 0), (self.u_past.len(), 1))
            .copy_from(&self.u_past);
        out.view_mut((self.u_past.len(), 0), (self.y_past.len(), 1))
            .copy_from(&self.y_past);
        out
    }

    pub fn norm(&self) -> f64 {
        (self.u_past.norm_squared() + self.y_past.norm_squared()).sqrt()
    }

    /// The past input window as `n` vectors in increasing time order.
    pub fn input_window(&self) -> Vec<DVector<f64>> {
        split_blocks(&self.u_past, self.m)
    }

    /// The past output window as `n` vectors in increasing time order.
    pub fn output_window(&self) -> Vec<DVector<f64>> {
        split_blocks(&self.y_past, self.p)
    }
}

fn split_blocks(stacked: &DVector<f64>, q: usize) -> Vec<DVector<f64>> {
    (0..stacked.len() / q)
        .map(|k| stacked.rows(k * q, q).into_owned())
        .collect()
}

/// Result of the trajectory-membership test.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    /// `min_alpha || [H_L(u^d); H_L(y^d)] alpha - [u; y] ||_2`.
    pub residual: f64,
    /// The minimizing minimum-norm combination vector.
    pub alpha: DVector<f64>,
    /// Whether the data input was persistently exciting of order
    /// `L + order_bound` (required for the exactness claim).
    pub pe_satisfied: bool,
    pub pe_min_singular_value: f64,
}

/// Tests whether `candidate` lies in the span of length-`L` windows of the
/// data, i.e. whether it is a trajectory of the system that produced `data`.
///
/// A residual near zero certifies membership; for data with persistently
/// exciting input of order `L + order_bound` the test is exact. The PE
/// condition is checked and reported, not enforced.
pub fn membership_residual(
    data: &TrajectoryData,
    candidate: &TrajectoryData,
    order_bound: usize,
    tol: f64,
) -> Result<MembershipReport, SignalError> {
    if data.input_dim() != candidate.input_dim() {
        return Err(SignalError::DimensionMismatch {
            what: "input dimensions of data and candidate differ",
        });
    }
    if data.output_dim() != candidate.output_dim() {
        return Err(SignalError::DimensionMismatch {
            what: "output dimensions of data and candidate differ",
        });
    }
    let window = candidate.len();
    if window > data.len() {
        return Err(SignalError::WindowTooDeep {
            depth: window,
            len: data.len(),
        });
    }
    let h_u = build_hankel(data.inputs(), window)?;
    let h_y = build_hankel(data.outputs(), window)?;
    let stacked = stack_vertical(h_u.entries(), h_y.entries());
    let target = {
        let u = extract_window(candidate.inputs(), 0, window - 1)?;
        let y = extract_window(candidate.outputs(), 0, window - 1)?;
        let mut t = DVector::zeros(u.len() + y.len());
        t.view_mut((0, 0), (u.len(), 1)).copy_from(&u);
        t.view_mut((u.len(), 0), (y.len(), 1)).copy_from(&y);
        t
    };
    // Minimum-norm least-squares solution via SVD.
    let svd = stacked.clone().svd(true, true);
    let alpha = svd
        .solve(&target, tol.max(f64::EPSILON))
        .map_err(|e| SignalError::InvalidTrajectory(e.to_string()))?;
    let residual = (&stacked * &alpha - &target).norm();
    let pe = is_persistently_exciting(data.inputs(), window + order_bound, tol.max(f64::EPSILON))?;
    Ok(MembershipReport {
        residual,
        alpha,
        pe_satisfied: pe.satisfied,
        pe_min_singular_value: pe.min_singular_value,
    })
}

/// Stacks two matrices with equal column counts vertically.
pub fn stack_vertical(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols(), "column counts must match");
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), (top.nrows(), top.ncols())).copy_from(top);
    out.view_mut((top.nrows(), 0), (bottom.nrows(), bottom.ncols()))
        .copy_from(bottom);
    out
}
