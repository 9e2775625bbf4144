//! PLCC, SRCC (average ranks for ties) and KRCC (tau-b).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted and subjective scores, validated: equal length, `n ≥ 2`, finite.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedScores {
    predicted: Vec<f64>,
    subjective: Vec<f64>,
}

impl PairedScores {
    pub fn new(predicted: Vec<f64>, subjective: Vec<f64>) -> Result<Self> {
        if predicted.len() != subjective.len() {
            return Err(Error::LengthMismatch {
                left: predicted.len(),
                right: subjective.len(),
            });
        }
        if predicted.len() < 2 {
            return Err(Error::InvalidScores("at least two pairs are required".into()));
        }
        if predicted.iter().chain(&subjective).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScores("scores must be finite".into()));
        }
        Ok(PairedScores {
            predicted,
            subjective,
        })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn subjective(&self) -> &[f64] {
        &self.subjective
    }

    /// Reads `predicted,subjective` rows; extra columns are ignored and a
    /// non-numeric first row is taken as a header.
    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let (mut predicted, mut subjective) = (Vec::new(), Vec::new());
        for (i, row) in csv.records().enumerate() {
            let row = row?;
            let parse = |col: usize| row.get(col).and_then(|v| v.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(p), Some(s)) => {
                    predicted.push(p);
                    subjective.push(s);
                }
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::InvalidScores(format!(
                        "line {}: expected two numeric columns",
                        i + 1
                    )))
                }
            }
        }
        PairedScores::new(predicted, subjective)
    }
}

/// How PLCC treats the predictions before correlating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlccMode {
    /// Correlate raw pairs.
    #[default]
    Raw,
    /// Fit a four-parameter logistic from predictions to subjective scores
    /// first, then correlate the fitted values.
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
}

pub fn correlations(scores: &PairedScores, mode: PlccMode) -> Result<Correlations> {
    let plcc = match mode {
        PlccMode::Raw => plcc(scores)?,
        PlccMode::Logistic => plcc_logistic(scores)?,
    };
    Ok(Correlations {
        plcc,
        srcc: srcc(scores)?,
        krcc: krcc(scores)?,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation of the raw pairs.
pub fn plcc(scores: &PairedScores) -> Result<f64> {
    pearson(&scores.predicted, &scores.subjective)
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn srcc(scores: &PairedScores) -> Result<f64> {
    let rp = average_ranks(&scores.predicted);
    let rs = average_ranks(&scores.subjective);
    pearson(&rp, &rs).map_err(|_| Error::DegenerateSeries("all values tie"))
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn krcc(scores: &PairedScores) -> Result<f64> {
    let n = scores.len();
    let (x, y) = (&scores.predicted, &scores.subjective);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let total = pairs(n as u64);

    // ties in x, and joint ties in (x, y)
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    // discordant pairs = swaps needed to sort y in this order
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tied_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tied_y += pairs(run_y);
            run_y = 1;
        }
    }
    tied_y += pairs(run_y);

    let n0 = total as f64;
    let denom = ((n0 - tied_x as f64) * (n0 - tied_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateSeries("no untied pairs"));
    }
    // C - D = n0 - n1 - n2 + n3 - 2·swaps
    let numer = total as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    Ok((numer / denom).clamp(-1.0, 1.0))
}

/// Stable merge sort returning the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// `f(x) = b2 + (b1 - b2) / (1 + exp(-(x - b3) / |b4|))`
fn logistic4(beta: &[f64; 4], x: f64) -> f64 {
    beta[1] + (beta[0] - beta[1]) / (1.0 + (-(x - beta[2]) / beta[3].abs()).exp())
}

/// PLCC after fitting a four-parameter logistic with Levenberg-Marquardt.
pub fn plcc_logistic(scores: &PairedScores) -> Result<f64> {
    let (x, y) = (&scores.predicted, &scores.subjective);
    let n = x.len() as f64;
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmean = x.iter().sum::<f64>() / n;
    let xstd = (x.iter().map(|v| (v - xmean).powi(2)).sum::<f64>() / n).sqrt();
    if xstd == 0.0 || ymax == ymin {
        return Err(Error::DegenerateSeries("zero variance"));
    }
    let mut beta = [ymax, ymin, xmean, xstd];
    let sse = |b: &[f64; 4]| -> f64 { x.iter().zip(y).map(|(xi, yi)| (yi - logistic4(b, *xi)).powi(2)).sum() };
    let mut cost = sse(&beta);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (xi, yi) in x.iter().zip(y) {
            let s = beta[3].abs();
            let e = (-(xi - beta[2]) / s).exp();
            let g = 1.0 / (1.0 + e);
            let r = yi - logistic4(&beta, *xi);
            let dg_dz = g * g * e; // d g / d ((x - b3)/s)
            let span = beta[0] - beta[1];
            let jac = [
                g,
                1.0 - g,
                -span * dg_dz / s,
                -span * dg_dz * (xi - beta[2]) / (s * s) * beta[3].signum(),
            ];
            for a in 0..4 {
                jtr[a] += jac[a] * r;
                for b in 0..4 {
                    jtj[a][b] += jac[a] * jac[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut system = jtj;
            for (a, row) in system.iter_mut().enumerate() {
                row[a] += lambda * (jtj[a][a] + 1e-12);
            }
            let Some(step) = solve4(system, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [
                beta[0] + step[0],
                beta[1] + step[1],
                beta[2] + step[2],
                beta[3] + step[3],
            ];
            let trial_cost = sse(&trial);
            if trial_cost.is_finite() && trial_cost < cost && trial[3] != 0.0 {
                let gain = cost - trial_cost;
                beta = trial;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-15 * (1.0 + cost);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let fitted: Vec<f64> = x.iter().map(|xi| logistic4(&beta, *xi)).collect();
    pearson(&fitted, y)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_two_column_csv() {
        let with_header = "predicted,subjective\n1,2\n2,3\n3,5\n";
        let s = PairedScores::from_csv(with_header.as_bytes()).unwrap();
        assert_eq!(s.predicted(), [1.0, 2.0, 3.0]);
        assert_eq!(s.subjective(), [2.0, 3.0, 5.0]);
        assert_eq!(PairedScores::from_csv("1,2\n4,1\n".as_bytes()).unwrap().len(), 2);
        assert!(PairedScores::from_csv("1,2\nx,1\n".as_bytes()).is_err());
    }

    fn pairs(p: &[f64], y: &[f64]) -> PairedScores {
        PairedScores::new(p.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(PairedScores::new(vec![1.0], vec![1.0]).is_err());
        assert!(PairedScores::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(PairedScores::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn plcc_examples() {
        let y = [0.3, 1.7, 2.2, 4.9];
        assert!((plcc(&pairs(&y, &y)).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((plcc(&pairs(&neg, &y)).unwrap() + 1.0).abs() < 1e-15);
        // sxy = 3, sxx = 2, syy = 14/3
        let r = plcc(&pairs(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0])).unwrap();
        assert!((r - 3.0 / (28.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.98198).abs() < 1e-5);
        assert!(matches!(
            plcc(&pairs(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])),
            Err(Error::DegenerateSeries(_))
        ));
    }

    #[test]
    fn srcc_examples() {
        let y = [0.5, 1.0, 3.0, 3.5, 9.0];
        let mono: Vec<f64> = y.iter().map(|v: &f64| v.exp() * 3.0 - 1.0).collect();
        assert!((srcc(&pairs(&mono, &y)).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!((srcc(&pairs(&rev, &y)).unwrap() + 1.0).abs() < 1e-12);
        let r = srcc(&pairs(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn krcc_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(krcc(&pairs(&y, &y)).unwrap(), 1.0);
        assert_eq!(krcc(&pairs(&[4.0, 3.0, 2.0, 1.0], &y)).unwrap(), -1.0);
        let r = krcc(&pairs(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            krcc(&pairs(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0])),
            Err(Error::DegenerateSeries(_))
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn logistic_plcc_linearizes_sigmoid_relation() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0 - 5.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 4.0 / (1.0 + (-v * 1.3).exp())).collect();
        let s = pairs(&x, &y);
        let raw = plcc(&s).unwrap();
        let fitted = plcc_logistic(&s).unwrap();
        assert!(fitted > raw);
        assert!(fitted > 0.9999, "{fitted}");
    }
}
