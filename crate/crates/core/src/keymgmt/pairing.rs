use std::fmt;
use std::io::Read;

use serde::Serialize;

use crate::registry::Registry;

/// Values closer than this are treated as equal when breaking ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("matrix is not square: {rows} transmitters, {cols} receivers")]
    NotSquare { rows: usize, cols: usize },
    #[error("missing entry for {transmitter} -> {receiver}")]
    MissingEntry {
        transmitter: String,
        receiver: String,
    },
    #[error("threshold must lie in (0, 0.5), got {0}")]
    Threshold(f64),
    #[error("csv: {0}")]
    Csv(String),
}

/// Back-to-back QBER of every transmitter/receiver combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingMatrix {
    pub transmitters: Vec<String>,
    pub receivers: Vec<String>,
    /// Row per transmitter; `None` marks an unmeasured combination.
    pub qber: Vec<Vec<Option<f64>>>,
}

fn parse_fraction(cell: &str) -> Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let (number, scale) = match cell.strip_suffix('%') {
        Some(n) => (n.trim(), 0.01),
        None => (cell, 1.0),
    };
    let v: f64 = number
        .parse()
        .map_err(|_| format!("'{cell}' is not a number"))?;
    let v = v * scale;
    if !(0.0..=0.5).contains(&v) {
        return Err(format!("QBER {cell} outside [0, 0.5]"));
    }
    Ok(Some(v))
}

impl PairingMatrix {
    pub fn new(
        transmitters: Vec<String>,
        receivers: Vec<String>,
        qber: Vec<Vec<Option<f64>>>,
    ) -> Self {
        Self {
            transmitters,
            receivers,
            qber,
        }
    }

    /// Square matrix with generated labels `T1..`, `R1..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        Self {
            transmitters: (1..=n).map(|i| format!("T{i}")).collect(),
            receivers: (1..=m).map(|i| format!("R{i}")).collect(),
            qber: rows
                .iter()
                .map(|r| r.iter().copied().map(Some).collect())
                .collect(),
        }
    }

    /// Reads a table whose header names the receivers and whose first column
    /// names the transmitters. Cells are fractions or percentages (`0.97%`).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, MatrixError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| MatrixError::Csv(e.to_string()))?
            .clone();
        let receivers: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut transmitters = Vec::new();
        let mut qber = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| MatrixError::Row {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != receivers.len() + 1 {
                return Err(MatrixError::Row {
                    line,
                    message: format!(
                        "expected {} cells, found {}",
                        receivers.len() + 1,
                        record.len()
                    ),
                });
            }
            let label = record[0].to_string();
            if label.is_empty() {
                return Err(MatrixError::Row {
                    line,
                    message: "missing transmitter label".into(),
                });
            }
            let row = record
                .iter()
                .skip(1)
                .map(parse_fraction)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|message| MatrixError::Row { line, message })?;
            transmitters.push(label);
            qber.push(row);
        }
        Ok(Self {
            transmitters,
            receivers,
            qber,
        })
    }

    pub fn get(&self, transmitter: &str, receiver: &str) -> Option<f64> {
        let i = self.transmitters.iter().position(|t| t == transmitter)?;
        let j = self.receivers.iter().position(|r| r == receiver)?;
        self.qber[i][j]
    }

    fn dense(&self) -> Result<Vec<Vec<f64>>, MatrixError> {
        if self.transmitters.len() != self.receivers.len() {
            return Err(MatrixError::NotSquare {
                rows: self.transmitters.len(),
                cols: self.receivers.len(),
            });
        }
        self.qber
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or_else(|| MatrixError::MissingEntry {
                            transmitter: self.transmitters[i].clone(),
                            receiver: self.receivers[j].clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// A criterion for choosing a transmitter-to-receiver bijection.
pub trait PairingObjective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Value of a full assignment, `perm[i]` being row `i`'s column.
    fn value(&self, cost: &[Vec<f64>], perm: &[usize]) -> f64;

    /// Optimal value over all bijections.
    fn optimum(&self, cost: &[Vec<f64>]) -> f64;

    /// Whether rows `rows` can be matched into `cols` so that, combined with
    /// an already fixed partial value `fixed`, the total stays within `bound`.
    fn completes_within(&self, cost: &[Vec<f64>], rows: &[usize], cols: &[usize], fixed: f64, bound: f64) -> bool;

    fn extend(&self, fixed: f64, entry: f64) -> f64;
    fn empty(&self) -> f64;
}

fn submatrix(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&i| cols.iter().map(|&j| cost[i][j]).collect())
        .collect()
}

/// Minimum total QBER, solved with the Hungarian algorithm.
#[derive(Debug, Default)]
pub struct MinSumAssignment;

impl PairingObjective for MinSumAssignment {
    fn name(&self) -> &'static str {
        "min_sum"
    }

    fn value(&self, cost: &[Vec<f64>], perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
    }

    fn optimum(&self, cost: &[Vec<f64>]) -> f64 {
        let perm = hungarian(cost);
        self.value(cost, &perm)
    }

    fn completes_within(&self, cost: &[Vec<f64>], rows: &[usize], cols: &[usize], fixed: f64, bound: f64) -> bool {
        let sub = submatrix(cost, rows, cols);
        fixed + self.optimum(&sub) <= bound
    }

    fn extend(&self, fixed: f64, entry: f64) -> f64 {
        fixed + entry
    }

    fn empty(&self) -> f64 {
        0.0
    }
}

/// Minimum worst-pair QBER (bottleneck assignment).
#[derive(Debug, Default)]
pub struct BottleneckAssignment;

impl PairingObjective for BottleneckAssignment {
    fn name(&self) -> &'static str {
        "min_max"
    }

    fn value(&self, cost: &[Vec<f64>], perm: &[usize]) -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[i][j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn optimum(&self, cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        let mut values: Vec<f64> = cost.iter().flatten().copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let all: Vec<usize> = (0..n).collect();
        // Smallest threshold admitting a perfect matching.
        let (mut lo, mut hi) = (0, values.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if perfect_matching_under(cost, &all, &all, values[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        values[lo]
    }

    fn completes_within(&self, cost: &[Vec<f64>], rows: &[usize], cols: &[usize], fixed: f64, bound: f64) -> bool {
        fixed <= bound && perfect_matching_under(cost, rows, cols, bound)
    }

    fn extend(&self, fixed: f64, entry: f64) -> f64 {
        fixed.max(entry)
    }

    fn empty(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

/// Kuhn's augmenting-path matching restricted to entries `<= bound`.
fn perfect_matching_under(cost: &[Vec<f64>], rows: &[usize], cols: &[usize], bound: f64) -> bool {
    fn augment(
        r: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &c in &adj[r] {
            if !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, adj, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = rows
        .iter()
        .map(|&i| {
            cols.iter()
                .enumerate()
                .filter(|&(_, &j)| cost[i][j] <= bound)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let mut owner = vec![None; cols.len()];
    (0..rows.len()).all(|r| augment(r, &adj, &mut vec![false; cols.len()], &mut owner))
}

/// O(n^3) Hungarian algorithm with potentials; returns the column of each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub objective: String,
    pub pairs: Vec<(String, String, f64)>,
    pub total: f64,
    pub worst: f64,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, r, q) in &self.pairs {
            writeln!(f, "{t} -> {r}  {:.2}%", q * 100.0)?;
        }
        write!(
            f,
            "{}: total {:.2}%, worst {:.2}%",
            self.objective,
            self.total * 100.0,
            self.worst * 100.0
        )
    }
}

/// Optimal bijection under `objective`. Among optimal bijections the one whose
/// receiver sequence, read in transmitter order, is lexicographically
/// smallest wins.
pub fn best_pairing(
    matrix: &PairingMatrix,
    objective: &dyn PairingObjective,
) -> Result<Assignment, MatrixError> {
    let cost = matrix.dense()?;
    let n = cost.len();
    let bound = objective.optimum(&cost) + TIE_EPS;
    let mut perm = Vec::with_capacity(n);
    let mut free: Vec<usize> = (0..n).collect();
    let mut fixed = objective.empty();
    for i in 0..n {
        let rows: Vec<usize> = (i + 1..n).collect();
        let pick = free
            .iter()
            .position(|&j| {
                let trial = objective.extend(fixed, cost[i][j]);
                let cols: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
                objective.completes_within(&cost, &rows, &cols, trial, bound)
            })
            .expect("an optimal completion always exists");
        let j = free.remove(pick);
        fixed = objective.extend(fixed, cost[i][j]);
        perm.push(j);
    }
    let pairs: Vec<(String, String, f64)> = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            (
                matrix.transmitters[i].clone(),
                matrix.receivers[j].clone(),
                cost[i][j],
            )
        })
        .collect();
    Ok(Assignment {
        objective: objective.name().to_string(),
        total: pairs.iter().map(|p| p.2).sum(),
        worst: pairs.iter().map(|p| p.2).fold(0.0, f64::max),
        pairs,
    })
}

pub fn pairing_objectives() -> Registry<dyn PairingObjective> {
    let mut r: Registry<dyn PairingObjective> = Registry::new("pairing objective");
    r.register("min_sum", |_| Ok(Box::new(MinSumAssignment)));
    r.register("min_max", |_| Ok(Box::new(BottleneckAssignment)));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub pass: bool,
    pub threshold: f64,
    pub violations: Vec<(String, String, f64)>,
}

/// Passes iff every measured entry lies strictly below `threshold`.
pub fn symmetry_check(matrix: &PairingMatrix, threshold: f64) -> Result<SymmetryReport, MatrixError> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(MatrixError::Threshold(threshold));
    }
    let mut violations = Vec::new();
    for (i, row) in matrix.qber.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(q) = *v {
                if q >= threshold {
                    violations.push((
                        matrix.transmitters[i].clone(),
                        matrix.receivers[j].clone(),
                        q,
                    ));
                }
            }
        }
    }
    Ok(SymmetryReport {
        pass: violations.is_empty(),
        threshold,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use itertools::Itertools;
    use proptest::prelude::*;

    use super::*;

    fn table() -> PairingMatrix {
        PairingMatrix::from_csv(include_str!("../../fixtures/symmetry.csv").as_bytes()).unwrap()
    }

    /// First permutation in lexicographic order whose value is within
    /// tolerance of the exhaustive optimum.
    fn brute_force(cost: &[Vec<f64>], objective: &dyn PairingObjective) -> Vec<usize> {
        let n = cost.len();
        let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
        let best = perms
            .iter()
            .map(|p| objective.value(cost, p))
            .fold(f64::INFINITY, f64::min);
        perms
            .into_iter()
            .find(|p| objective.value(cost, p) <= best + TIE_EPS)
            .unwrap()
    }

    fn perm_of(a: &Assignment, m: &PairingMatrix) -> Vec<usize> {
        a.pairs
            .iter()
            .map(|(_, r, _)| m.receivers.iter().position(|x| x == r).unwrap())
            .collect()
    }

    #[test]
    fn table_min_sum() {
        let m = table();
        let a = best_pairing(&m, &MinSumAssignment).unwrap();
        let links: Vec<(&str, &str)> = a
            .pairs
            .iter()
            .map(|(t, r, _)| (t.as_str(), r.as_str()))
            .collect();
        assert_eq!(links, vec![("T1", "R3"), ("T2", "R1"), ("T3", "R4"), ("T4", "R2")]);
        assert!((a.total - 0.0258).abs() < 1e-12);
        let cost = m.dense().unwrap();
        assert_eq!(perm_of(&a, &m), brute_force(&cost, &MinSumAssignment));
    }

    #[test]
    fn table_min_max_matches_oracle() {
        let m = table();
        let a = best_pairing(&m, &BottleneckAssignment).unwrap();
        let cost = m.dense().unwrap();
        assert_eq!(perm_of(&a, &m), brute_force(&cost, &BottleneckAssignment));
    }

    #[test]
    fn diagonal_dominant_and_ties() {
        let m = PairingMatrix::from_rows(&[vec![0.1, 0.9], vec![0.9, 0.1]]);
        let a = best_pairing(&m, &MinSumAssignment).unwrap();
        assert_eq!(perm_of(&a, &m), vec![0, 1]);
        let flat = PairingMatrix::from_rows(&vec![vec![0.01; 4]; 4]);
        for obj in [&MinSumAssignment as &dyn PairingObjective, &BottleneckAssignment] {
            let a = best_pairing(&flat, obj).unwrap();
            assert_eq!(perm_of(&a, &flat), vec![0, 1, 2, 3]);
        }
        let one = PairingMatrix::from_rows(&[vec![0.02]]);
        assert_eq!(best_pairing(&one, &MinSumAssignment).unwrap().pairs.len(), 1);
    }

    #[test]
    fn shape_errors() {
        let m = PairingMatrix::from_csv("QBER,R1,R2\nT1,1%,2%\n".as_bytes()).unwrap();
        assert!(matches!(
            best_pairing(&m, &MinSumAssignment),
            Err(MatrixError::NotSquare { rows: 1, cols: 2 })
        ));
        let m = PairingMatrix::from_csv("QBER,R1,R2\nT1,1%,\nT2,1%,1%\n".as_bytes()).unwrap();
        assert!(matches!(
            best_pairing(&m, &MinSumAssignment),
            Err(MatrixError::MissingEntry { .. })
        ));
    }

    #[test]
    fn malformed_rows_report_lines() {
        let err = PairingMatrix::from_csv("QBER,R1,R2\nT1,1%,2%\nT2,x,2%\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "line 3: 'x' is not a number");
        let err = PairingMatrix::from_csv("QBER,R1,R2\nT1,1%\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "line 2: expected 3 cells, found 2");
        let err = PairingMatrix::from_csv("QBER,R1\nT1,60%\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn symmetry_thresholds() {
        let m = table();
        assert!(symmetry_check(&m, 0.012).unwrap().pass);
        let r = symmetry_check(&m, 0.010).unwrap();
        assert!(!r.pass);
        let mut v: Vec<(&str, &str)> = r
            .violations
            .iter()
            .map(|(t, r, _)| (t.as_str(), r.as_str()))
            .collect();
        v.sort();
        assert_eq!(v, vec![("T1", "R4"), ("T2", "R2"), ("T2", "R4"), ("T3", "R3")]);
        let empty = PairingMatrix::new(vec![], vec![], vec![]);
        assert!(symmetry_check(&empty, 0.01).unwrap().pass);
        assert!(symmetry_check(&m, 0.0).is_err());
    }

    #[test]
    fn objectives_are_registered() {
        let r = pairing_objectives();
        assert_eq!(r.names(), vec!["min_max", "min_sum"]);
        assert_eq!(
            r.create("min_max", &serde_json::Value::Null).unwrap().name(),
            "min_max"
        );
        assert!(r.create("max_sum", &serde_json::Value::Null).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(
            n in 1usize..=6,
            raw in prop::collection::vec(0u32..20, 36),
        ) {
            // Coarse values so ties are common.
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| f64::from(raw[i * 6 + j]) * 0.001).collect())
                .collect();
            let m = PairingMatrix::from_rows(&rows);
            for obj in [&MinSumAssignment as &dyn PairingObjective, &BottleneckAssignment] {
                let a = best_pairing(&m, obj).unwrap();
                prop_assert_eq!(perm_of(&a, &m), brute_force(&rows, obj));
            }
        }
    }
}
