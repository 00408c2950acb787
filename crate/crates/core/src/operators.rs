//! Selection, interpolation, integration and differencing operators shared by
//! the inversion and the state-space solver.

use thiserror::Error;

/// Filler spacing used by [`build_time_grid`] when there is a single ping and
/// hence no sampling interval to measure (s).
pub const DEFAULT_FILLER_SPACING: f64 = 15.0;

/// Tolerance for matching a sample time to a grid node (s).
pub const TIME_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("size {got} too small, need at least {need}")]
    TooSmall { got: usize, need: usize },
    #[error("ping times must lie within the span [{start}, {end}] and be sorted and distinct")]
    BadSpan { start: f64, end: f64 },
    #[error("sample time {0} is not a grid node")]
    TimeNotOnGrid(f64),
    #[error("sample depth {depth} outside grid [{top}, {bottom}]")]
    DepthOutsideGrid { depth: f64, top: f64, bottom: f64 },
    #[error("invalid triplet ({row}, {col}, {value}) for a {rows}x{cols} matrix")]
    BadTriplet { row: usize, col: usize, value: f64, rows: usize, cols: usize },
    #[error("duplicate entry at ({0}, {1})")]
    DuplicateEntry(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Compressed sparse row matrix with unique, finite, nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds from `(row, col, value)` triplets in any order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, OperatorError> {
        for &(row, col, value) in &triplets {
            if row >= rows || col >= cols || !value.is_finite() || value == 0.0 {
                return Err(OperatorError::BadTriplet { row, col, value, rows, cols });
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(OperatorError::DuplicateEntry(w[0].0, w[0].1));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    /// Like [`SparseMatrix::from_triplets`] but sums repeated positions and
    /// drops entries that cancel to exactly zero.
    pub fn from_triplets_summed(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, OperatorError> {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (r, c) => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|t| t.2 != 0.0);
        Self::from_triplets(rows, cols, merged)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|i| vals[i]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows)
            .map(|r| {
                let (c, v) = self.row(r);
                c.iter().zip(v).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_mul_vec dimension");
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            let (c, v) = self.row(r);
            for (&c, &v) in c.iter().zip(v) {
                out[c] += v * yr;
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= factor);
        m
    }

    /// Row-major dense copy; intended for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Places the column blocks side by side; blocks must share a row count.
    pub fn hstack(blocks: &[&SparseMatrix]) -> Result<Self, OperatorError> {
        let rows = blocks.first().map(|b| b.rows).ok_or(OperatorError::Empty("hstack"))?;
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(OperatorError::Dimension("hstack blocks differ in row count".into()));
        }
        let mut trip = Vec::with_capacity(blocks.iter().map(|b| b.nnz()).sum());
        let mut offset = 0;
        for b in blocks {
            trip.extend(b.triplets().map(|(r, c, v)| (r, c + offset, v)));
            offset += b.cols;
        }
        Self::from_triplets(rows, offset, trip)
    }

    /// Stacks row blocks; blocks must share a column count.
    pub fn vstack(blocks: &[&SparseMatrix]) -> Result<Self, OperatorError> {
        let cols = blocks.first().map(|b| b.cols).ok_or(OperatorError::Empty("vstack"))?;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(OperatorError::Dimension("vstack blocks differ in column count".into()));
        }
        let mut trip = Vec::with_capacity(blocks.iter().map(|b| b.nnz()).sum());
        let mut offset = 0;
        for b in blocks {
            trip.extend(b.triplets().map(|(r, c, v)| (r + offset, c, v)));
            offset += b.rows;
        }
        Self::from_triplets(offset, cols, trip)
    }
}

/// Temporal grid: every ping time plus filler nodes in the gaps.
///
/// The filler spacing `h` is the median ping interval (or
/// [`DEFAULT_FILLER_SPACING`] for a single ping). Interior gaps longer than
/// `2h` and the stretches between the span edges and the first/last ping are
/// filled with nodes every `h`; the sub-interval that closes a gap is
/// whatever remains.
pub fn build_time_grid(ping_times: &[f64], span: (f64, f64)) -> Result<Vec<f64>, OperatorError> {
    if ping_times.is_empty() {
        return Err(OperatorError::Empty("ping times"));
    }
    let (start, end) = span;
    let sorted = ping_times.windows(2).all(|w| w[1] > w[0]);
    if !sorted || ping_times[0] < start || ping_times[ping_times.len() - 1] > end || !(start < end) {
        return Err(OperatorError::BadSpan { start, end });
    }
    let h = if ping_times.len() == 1 {
        DEFAULT_FILLER_SPACING
    } else {
        let mut d: Vec<f64> = ping_times.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    };

    let mut grid = Vec::with_capacity(ping_times.len() + 16);
    let fill = |grid: &mut Vec<f64>, a: f64, b: f64| {
        let mut k = 1.0;
        while a + k * h < b - 1e-6 * h {
            grid.push(a + k * h);
            k += 1.0;
        }
    };
    if start < ping_times[0] - TIME_MATCH_TOL {
        grid.push(start);
        fill(&mut grid, start, ping_times[0]);
    }
    for (i, &t) in ping_times.iter().enumerate() {
        if i > 0 {
            let prev = ping_times[i - 1];
            if t - prev > 2.0 * h {
                fill(&mut grid, prev, t);
            }
        }
        grid.push(t);
    }
    let last = ping_times[ping_times.len() - 1];
    if end > last + TIME_MATCH_TOL {
        fill(&mut grid, last, end);
        grid.push(end);
    }
    Ok(grid)
}

/// `K x M` selection matrix picking the grid node equal to each sample time.
pub fn build_subsample_matrix(t_hat: &[f64], sample_times: &[f64]) -> Result<SparseMatrix, OperatorError> {
    let mut trip = Vec::with_capacity(sample_times.len());
    for (k, &t) in sample_times.iter().enumerate() {
        let m = node_index(t_hat, t).ok_or(OperatorError::TimeNotOnGrid(t))?;
        trip.push((k, m, 1.0));
    }
    SparseMatrix::from_triplets(sample_times.len(), t_hat.len(), trip)
}

/// Index of the grid node within [`TIME_MATCH_TOL`] of `t`.
pub fn node_index(t_hat: &[f64], t: f64) -> Option<usize> {
    let i = t_hat.partition_point(|&x| x < t - TIME_MATCH_TOL);
    (i < t_hat.len() && (t_hat[i] - t).abs() <= TIME_MATCH_TOL).then_some(i)
}

/// Linear-interpolation weights of one depth on a uniform grid: one or two
/// `(node, weight)` pairs summing to one.
pub fn interp_weights(z_hat: &[f64], depth: f64) -> Result<Vec<(usize, f64)>, OperatorError> {
    let l = z_hat.len();
    let out_of_grid = || OperatorError::DepthOutsideGrid { depth, top: z_hat[0], bottom: z_hat[l - 1] };
    if !(depth >= z_hat[0] && depth <= z_hat[l - 1]) {
        return Err(out_of_grid());
    }
    let dz = z_hat[1] - z_hat[0];
    let pos = (depth - z_hat[0]) / dz;
    let i = (pos.floor() as usize).min(l - 1);
    let f = pos - i as f64;
    if f <= 0.0 || i == l - 1 {
        return Ok(vec![(i, 1.0)]);
    }
    let mut w = vec![(i, 1.0 - f), (i + 1, f)];
    w.retain(|&(_, x)| x != 0.0);
    Ok(w)
}

/// `K x L` linear interpolation from the uniform depth grid `z_hat` onto
/// `sample_depths`. Rows whose mask entry is `false` are left empty.
pub fn build_linear_interp_matrix(
    z_hat: &[f64],
    sample_depths: &[f64],
    mask: Option<&[bool]>,
) -> Result<SparseMatrix, OperatorError> {
    if z_hat.len() < 2 {
        return Err(OperatorError::TooSmall { got: z_hat.len(), need: 2 });
    }
    if let Some(m) = mask {
        if m.len() != sample_depths.len() {
            return Err(OperatorError::Dimension(format!("mask {} vs samples {}", m.len(), sample_depths.len())));
        }
    }
    let mut trip = Vec::with_capacity(2 * sample_depths.len());
    for (k, &z) in sample_depths.iter().enumerate() {
        let weights = interp_weights(z_hat, z)?;
        if mask.is_none_or(|m| m[k]) {
            trip.extend(weights.into_iter().map(|(l, w)| (k, l, w)));
        }
    }
    SparseMatrix::from_triplets(sample_depths.len(), z_hat.len(), trip)
}

/// Trapezoidal-rule quadrature weights on the nodes `t_hat`.
pub fn trapezoid_weights(t_hat: &[f64]) -> Result<Vec<f64>, OperatorError> {
    let m = t_hat.len();
    if m < 2 {
        return Err(OperatorError::TooSmall { got: m, need: 2 });
    }
    let mut w = vec![0.0; m];
    w[0] = 0.5 * (t_hat[1] - t_hat[0]);
    for i in 1..m - 1 {
        w[i] = 0.5 * (t_hat[i + 1] - t_hat[i - 1]);
    }
    w[m - 1] = 0.5 * (t_hat[m - 1] - t_hat[m - 2]);
    Ok(w)
}

/// `(n-2) x n` second-difference operator with rows `(1, -2, 1)`.
pub fn second_difference(n: usize) -> Result<SparseMatrix, OperatorError> {
    if n < 3 {
        return Err(OperatorError::TooSmall { got: n, need: 3 });
    }
    let trip = (0..n - 2).flat_map(|r| [(r, r, 1.0), (r, r + 1, -2.0), (r, r + 2, 1.0)]).collect();
    SparseMatrix::from_triplets(n - 2, n, trip)
}

/// `(n-1) x n` adjacent-difference operator with rows `(1, -1)`.
pub fn adjacent_difference(n: usize) -> Result<SparseMatrix, OperatorError> {
    if n < 2 {
        return Err(OperatorError::TooSmall { got: n, need: 2 });
    }
    let trip = (0..n - 1).flat_map(|r| [(r, r, 1.0), (r, r + 1, -1.0)]).collect();
    SparseMatrix::from_triplets(n - 1, n, trip)
}
