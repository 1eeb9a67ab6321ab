//! Plain-text checkpoints of models and policies.
//!
//! ```text
//! policy 2 3
//! b 2 1
//! 0.5 -1
//! K 2 3
//! ...
//! ```
//!
//! A header line `<kind> <dθ> <dc>`, then one block per matrix: a line
//! `<name> <rows> <cols>` followed by `rows` lines of whitespace-separated
//! values in row-major order. Blank lines and `#` comments are ignored.

use nalgebra::{DMatrix, DVector};

use crate::{Error, GaussianLinearPolicy, QuadraticModel, Result};

fn push_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub fn model_to_string(m: &QuadraticModel) -> String {
    let mut s = format!("model {} {}\n", m.dim_theta(), m.dim_context());
    push_block(&mut s, "A", m.a());
    push_block(&mut s, "B", m.b());
    push_block(&mut s, "D", m.d());
    push_block(&mut s, "r1", &col(m.r1()));
    push_block(&mut s, "r2", &col(m.r2()));
    push_block(&mut s, "r0", &DMatrix::from_element(1, 1, m.r0()));
    s
}

pub fn policy_to_string(p: &GaussianLinearPolicy) -> String {
    let mut s = format!("policy {} {}\n", p.dim_theta(), p.dim_context());
    push_block(&mut s, "b", &col(p.b()));
    push_block(&mut s, "K", p.k());
    push_block(&mut s, "Q", p.q());
    s
}

struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    fn err(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            line,
            reason: reason.into(),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let l = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.lines.last().map_or(0, |l| l.0), "unexpected end of input"))?;
        self.pos += 1;
        Ok(l)
    }

    fn header(&mut self, kind: &str) -> Result<(usize, usize)> {
        let (n, line) = self.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [k, dt, dc] if *k == kind => Ok((
                dt.parse().map_err(|_| self.err(n, "bad dimension"))?,
                dc.parse().map_err(|_| self.err(n, "bad dimension"))?,
            )),
            _ => Err(self.err(n, format!("expected header `{kind} <dim_theta> <dim_context>`"))),
        }
    }

    fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (n, line) = self.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts != [name, &rows.to_string(), &cols.to_string()] {
            return Err(self.err(n, format!("expected block header `{name} {rows} {cols}`")));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let (n, line) = self.next()?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| self.err(n, format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols {
                return Err(self.err(n, format!("expected {cols} values, found {}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            Some((n, _)) => Err(self.err(*n, "trailing content")),
            None => Ok(()),
        }
    }
}

pub fn model_from_str(text: &str) -> Result<QuadraticModel> {
    let mut r = Reader::new(text);
    let (dt, dc) = r.header("model")?;
    let a = r.block("A", dt, dt)?;
    let b = r.block("B", dc, dc)?;
    let d = r.block("D", dt, dc)?;
    let r1 = r.block("r1", dt, 1)?.column(0).into_owned();
    let r2 = r.block("r2", dc, 1)?.column(0).into_owned();
    let r0 = r.block("r0", 1, 1)?[(0, 0)];
    r.finish()?;
    QuadraticModel::new(a, b, d, r1, r2, r0)
}

pub fn policy_from_str(text: &str) -> Result<GaussianLinearPolicy> {
    let mut r = Reader::new(text);
    let (dt, dc) = r.header("policy")?;
    let b = r.block("b", dt, 1)?.column(0).into_owned();
    let k = r.block("K", dt, dc)?;
    let q = r.block("Q", dt, dt)?;
    r.finish()?;
    GaussianLinearPolicy::new(b, k, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = QuadraticModel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, -2.0]),
            DMatrix::from_row_slice(1, 1, &[1.0 / 3.0]),
            DMatrix::from_row_slice(2, 1, &[0.25, -7e-12]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![std::f64::consts::PI]),
            -4.5,
        )
        .unwrap();
        assert_eq!(model_from_str(&model_to_string(&m)).unwrap(), m);

        let p = GaussianLinearPolicy::new(
            DVector::from_vec(vec![0.1, 0.2]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        assert_eq!(policy_from_str(&policy_to_string(&p)).unwrap(), p);
    }

    #[test]
    fn malformed_input_reports_line() {
        let err = policy_from_str("policy 1 1\nb 1 1\n0.5\nK 1 1\nx\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 5, .. }), "{err}");
        assert!(model_from_str("policy 1 1\n").is_err());
    }
}
