//! Least-squares ANOVA with categorical factors.
//!
//! The model holds an intercept, every main effect and every two-way
//! interaction, each factor in sum-to-zero (effects) coding. A term's sum of
//! squares is the rise in residual SS when its columns alone are dropped from
//! that model (Type III). Three-way and higher interactions are not fitted, so
//! they are pooled with pure error in the residual line.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::Table;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTerm {
    /// Factor name, `a:b` for an interaction, or `residual`.
    pub name: String,
    pub df: usize,
    pub ss: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub terms: Vec<AnovaTerm>,
    pub residual: AnovaTerm,
    pub n_obs: usize,
}

impl AnovaTable {
    pub fn term(&self, name: &str) -> Option<&AnovaTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Mean square of a term, looked up by name.
    pub fn ms(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.ms)
    }

    /// Writes `name,df,ss,ms`, terms first and the residual last.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in self.terms.iter().chain(std::iter::once(&self.residual)) {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    Main(usize),
    Pair(usize, usize),
}

struct Coded {
    names: Vec<String>,
    levels: Vec<Vec<f64>>,
    /// `index[f][row]` is the level index of factor `f` in `row`.
    index: Vec<Vec<usize>>,
}

impl Coded {
    fn new(table: &Table, factors: &[&str]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("need at least one factor"));
        }
        let mut levels = Vec::new();
        let mut index = Vec::new();
        for f in factors {
            let col = table.column(f)?;
            let mut lv: Vec<f64> = col.to_vec();
            lv.sort_by(f64::total_cmp);
            lv.dedup();
            index.push(col.iter().map(|v| lv.partition_point(|l| l < v)).collect());
            levels.push(lv);
        }
        Ok(Self {
            names: factors.iter().map(|s| s.to_string()).collect(),
            levels,
            index,
        })
    }

    fn n_levels(&self, f: usize) -> usize {
        self.levels[f].len()
    }

    fn terms(&self) -> Vec<Term> {
        let k = self.names.len();
        let mut t: Vec<Term> = (0..k).map(Term::Main).collect();
        for a in 0..k {
            for b in a + 1..k {
                t.push(Term::Pair(a, b));
            }
        }
        t
    }

    fn term_name(&self, t: Term) -> String {
        match t {
            Term::Main(f) => self.names[f].clone(),
            Term::Pair(a, b) => format!("{}:{}", self.names[a], self.names[b]),
        }
    }

    fn term_df(&self, t: Term) -> usize {
        match t {
            Term::Main(f) => self.n_levels(f) - 1,
            Term::Pair(a, b) => (self.n_levels(a) - 1) * (self.n_levels(b) - 1),
        }
    }

    /// Effects-coded vector of level `l` of factor `f` (length `L - 1`).
    fn code(&self, f: usize, l: usize) -> Vec<f64> {
        let last = self.n_levels(f) - 1;
        (0..last)
            .map(|j| if l == last { -1.0 } else if l == j { 1.0 } else { 0.0 })
            .collect()
    }

    /// Model row for per-factor code vectors.
    fn row(&self, codes: &[Vec<f64>], terms: &[Term]) -> Vec<f64> {
        let mut row = vec![1.0];
        for &t in terms {
            match t {
                Term::Main(f) => row.extend_from_slice(&codes[f]),
                Term::Pair(a, b) => {
                    for x in &codes[a] {
                        for y in &codes[b] {
                            row.push(x * y);
                        }
                    }
                }
            }
        }
        row
    }

    fn design(&self, terms: &[Term]) -> DMatrix<f64> {
        let n = self.index[0].len();
        let p = 1 + terms.iter().map(|&t| self.term_df(t)).sum::<usize>();
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let codes: Vec<Vec<f64>> = (0..self.names.len()).map(|f| self.code(f, self.index[f][i])).collect();
            for (j, v) in self.row(&codes, terms).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        x
    }

    /// Term owning model column `col` (column 0 is the intercept).
    fn term_of_column(&self, terms: &[Term], col: usize) -> Option<Term> {
        let mut end = 1;
        for &t in terms {
            end += self.term_df(t);
            if col < end {
                return Some(t);
            }
        }
        None
    }
}

/// Cholesky factor of a symmetric matrix, or the first column whose pivot
/// falls below `1e-10` of its diagonal (collinear with earlier columns).
fn cholesky_or_pivot(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-10 * a[(j, j)]) {
            return Err(j);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

fn solve_chol(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("non-zero pivots");
    l.transpose().solve_upper_triangular(&z).expect("non-zero pivots")
}

struct LsFit {
    beta: DVector<f64>,
    rss: f64,
}

/// Full-model design with its cross products, for refits on column subsets.
struct Model {
    terms: Vec<Term>,
    x: DMatrix<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

impl Model {
    fn new(coded: &Coded, y: &DVector<f64>) -> Self {
        let terms = coded.terms();
        let x = coded.design(&terms);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * y;
        Self { terms, x, xtx, xty }
    }

    /// Model columns of every term except `skip`.
    fn columns(&self, coded: &Coded, skip: Option<usize>) -> Vec<usize> {
        let mut cols = vec![0];
        let mut start = 1;
        for (k, &t) in self.terms.iter().enumerate() {
            let df = coded.term_df(t);
            if Some(k) != skip {
                cols.extend(start..start + df);
            }
            start += df;
        }
        cols
    }

    fn fit(&self, coded: &Coded, y: &DVector<f64>, cols: &[usize]) -> Result<LsFit> {
        let xtx = self.xtx.select_rows(cols).select_columns(cols);
        let l = cholesky_or_pivot(&xtx).map_err(|k| {
            let which = coded
                .term_of_column(&self.terms, cols[k])
                .map_or_else(|| "intercept".to_string(), |t| coded.term_name(t));
            Error::RankDeficient(format!("term `{which}` is not estimable (empty cells?)"))
        })?;
        let beta = solve_chol(&l, &self.xty.select_rows(cols));
        let resid = y - self.x.select_columns(cols) * &beta;
        Ok(LsFit {
            rss: resid.norm_squared(),
            beta,
        })
    }
}

fn response(table: &Table, name: &str) -> Result<DVector<f64>> {
    let y = table.column(name)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("response `{name}` has non-finite values")));
    }
    Ok(DVector::from_column_slice(y))
}

/// Mean squares of every main effect and two-way interaction, and of the
/// pooled residual.
pub fn anova_balanced(table: &Table, factors: &[&str], response_name: &str) -> Result<AnovaTable> {
    let coded = Coded::new(table, factors)?;
    let y = response(table, response_name)?;
    let model = Model::new(&coded, &y);
    let full = model.fit(&coded, &y, &model.columns(&coded, None))?;
    let n = y.len();
    let p = full.beta.len();
    let mut out = Vec::with_capacity(model.terms.len());
    for (k, &t) in model.terms.iter().enumerate() {
        let fit = model.fit(&coded, &y, &model.columns(&coded, Some(k)))?;
        let df = coded.term_df(t);
        let ss = (fit.rss - full.rss).max(0.0);
        out.push(AnovaTerm {
            name: coded.term_name(t),
            df,
            ss,
            ms: if df > 0 { ss / df as f64 } else { 0.0 },
        });
    }
    let df_res = n.saturating_sub(p);
    Ok(AnovaTable {
        terms: out,
        residual: AnovaTerm {
            name: "residual".into(),
            df: df_res,
            ss: full.rss,
            ms: if df_res > 0 { full.rss / df_res as f64 } else { f64::NAN },
        },
        n_obs: n,
    })
}

/// One least-squares mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsMean {
    pub level: f64,
    pub mean: f64,
}

/// Least-squares means of `factor` under the main-effects plus two-way
/// model: fitted values averaged over a uniform grid of the other factors'
/// levels.
pub fn ls_means(table: &Table, factors: &[&str], response_name: &str, factor: &str) -> Result<Vec<LsMean>> {
    let coded = Coded::new(table, factors)?;
    let target = factors
        .iter()
        .position(|f| *f == factor)
        .ok_or_else(|| Error::invalid(format!("`{factor}` is not one of the model factors")))?;
    let y = response(table, response_name)?;
    let model = Model::new(&coded, &y);
    let fit = model.fit(&coded, &y, &model.columns(&coded, None))?;
    let terms = &model.terms;
    // Averaging an interaction column over independent uniform grids is the
    // product of the per-factor averages.
    let mean_codes: Vec<Vec<f64>> = (0..factors.len())
        .map(|f| {
            let l = coded.n_levels(f);
            let mut m = vec![0.0; l - 1];
            for lv in 0..l {
                for (a, c) in m.iter_mut().zip(coded.code(f, lv)) {
                    *a += c / l as f64;
                }
            }
            m
        })
        .collect();
    Ok(coded.levels[target]
        .iter()
        .enumerate()
        .map(|(lv, &level)| {
            let mut codes = mean_codes.clone();
            codes[target] = coded.code(target, lv);
            let row = DVector::from_vec(coded.row(&codes, terms));
            LsMean {
                level,
                mean: row.dot(&fit.beta),
            }
        })
        .collect())
}
