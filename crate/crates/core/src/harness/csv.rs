use std::io::Write;

use super::RunRow;
use crate::Result;

pub const HEADER: &str = "iteration,eval_reward_mean,eval_reward_std,rank_b,eta,omega,dual_value,expected_kl,entropy,hit_rate,wall_time_s";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn format_row(r: &RunRow) -> String {
    [
        r.iteration.to_string(),
        fmt_f64(r.eval_reward_mean),
        fmt_f64(r.eval_reward_std),
        r.rank_b.map(|v| v.to_string()).unwrap_or_default(),
        opt_f64(r.eta),
        opt_f64(r.omega),
        opt_f64(r.dual_value),
        opt_f64(r.expected_kl),
        fmt_f64(r.entropy),
        opt_f64(r.hit_rate),
        opt_f64(r.wall_time_s),
    ]
    .join(",")
}

/// Streams rows to `out`, header first.
pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{HEADER}")?;
        Ok(Self { out })
    }

    pub fn write_row(&mut self, row: &RunRow) -> Result<()> {
        writeln!(self.out, "{}", format_row(row))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn to_string(rows: &[RunRow]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format_row(r));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cells_and_roundtrip() {
        let row = RunRow {
            iteration: 7,
            eval_reward_mean: -0.1,
            eval_reward_std: 1.0 / 3.0,
            rank_b: Some(3),
            eta: None,
            omega: Some(2.5),
            dual_value: None,
            expected_kl: None,
            entropy: -4.0,
            hit_rate: None,
            wall_time_s: None,
        };
        let line = format_row(&row);
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), HEADER.split(',').count());
        assert_eq!(cells[0], "7");
        assert_eq!(cells[3], "3");
        assert_eq!(cells[4], "");
        assert_eq!(cells[2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(to_string(&[row]).lines().count(), 2);
    }
}
