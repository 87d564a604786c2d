//! Text output: CSV tables with a units comment line and whitespace-separated
//! column files for plotting.

use std::fmt::Write as _;

use crate::chaos::ChaosStats;
use crate::dynamics::AtomState;
use crate::emission::JumpEvent;
use crate::ensemble::{CloudStats, SweepFlag, SweepRow};
use crate::{analytic, Error, Result, SimParams};

/// Enough significant digits for every `f64` to parse back bit-identically.
pub const DEFAULT_DIGITS: usize = 17;

/// Comment line carried by every normalized-unit table.
pub const UNITS_HEADER: &str =
    "# units: p in hbar*k_f, x in 1/k_f, tau in 1/Omega, D in hbar^2*k_f^2*Omega, lambda in Omega";

pub const SWEEP_HEADER: &str = "p,Lambda,D_measured,D_stderr,D_ch,D_reg,D_blend,flags";

/// Scientific notation with `digits` significant digits.
pub fn sci(x: f64, digits: usize) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.*e}", digits.max(1) - 1, x)
    }
}

fn parse_number(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: cannot parse `{field}` as a number")))
}

fn join_flags(flags: &[SweepFlag]) -> String {
    if flags.is_empty() {
        "ok".into()
    } else {
        flags.iter().map(SweepFlag::as_str).collect::<Vec<_>>().join(";")
    }
}

/// One parsed row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTableRow {
    pub p: f64,
    pub lambda: f64,
    pub d_measured: f64,
    pub d_stderr: f64,
    pub d_ch: f64,
    pub d_reg: f64,
    pub d_blend: f64,
    pub flags: Vec<SweepFlag>,
}

impl From<&SweepRow> for SweepTableRow {
    fn from(r: &SweepRow) -> Self {
        Self {
            p: r.p,
            lambda: r.chaos_probability,
            d_measured: r.d_measured,
            d_stderr: r.d_stderr,
            d_ch: r.d_chaotic,
            d_reg: r.d_regular,
            d_blend: r.d_blended,
            flags: r.flags.clone(),
        }
    }
}

impl SweepTableRow {
    fn numbers(&self) -> [f64; 7] {
        [
            self.p,
            self.lambda,
            self.d_measured,
            self.d_stderr,
            self.d_ch,
            self.d_reg,
            self.d_blend,
        ]
    }
}

pub fn sweep_table_csv(rows: &[SweepTableRow], digits: usize) -> String {
    let mut out = format!("{UNITS_HEADER}\n{SWEEP_HEADER}\n");
    for r in rows {
        for v in r.numbers() {
            out.push_str(&sci(v, digits));
            out.push(',');
        }
        out.push_str(&join_flags(&r.flags));
        out.push('\n');
    }
    out
}

pub fn sweep_rows_csv(rows: &[SweepRow], digits: usize) -> String {
    let table: Vec<SweepTableRow> = rows.iter().map(SweepTableRow::from).collect();
    sweep_table_csv(&table, digits)
}

/// Parses a table written by [`sweep_table_csv`].
pub fn parse_sweep_table(text: &str) -> Result<Vec<SweepTableRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SWEEP_HEADER => {}
        _ => return Err(Error::InvalidArgument("missing sweep table header".into())),
    }
    lines
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::InvalidArgument(format!("line {}: expected 8 fields", i + 1)));
            }
            let mut v = [0.0; 7];
            for (k, f) in fields[..7].iter().enumerate() {
                v[k] = parse_number(f, i + 1)?;
            }
            let flags = match fields[7].trim() {
                "ok" | "" => Vec::new(),
                s => s
                    .split(';')
                    .map(|f| {
                        SweepFlag::parse(f)
                            .ok_or_else(|| Error::InvalidArgument(format!("line {}: unknown flag `{f}`", i + 1)))
                    })
                    .collect::<Result<_>>()?,
            };
            Ok(SweepTableRow {
                p: v[0],
                lambda: v[1],
                d_measured: v[2],
                d_stderr: v[3],
                d_ch: v[4],
                d_reg: v[5],
                d_blend: v[6],
                flags,
            })
        })
        .collect()
}

/// Column files for a log-log overlay: `(p vs D values, p vs Λ)`.
pub fn plot_columns(rows: &[SweepTableRow], digits: usize) -> Result<(String, String)> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty sweep table".into()));
    }
    let mut d = format!("{UNITS_HEADER}\n# p D_measured D_stderr D_ch D_reg D_blend\n");
    let mut l = format!("{UNITS_HEADER}\n# p Lambda\n");
    for r in rows {
        let cols = [r.p, r.d_measured, r.d_stderr, r.d_ch, r.d_reg, r.d_blend];
        let line: Vec<String> = cols.iter().map(|&v| sci(v, digits)).collect();
        d.push_str(&line.join(" "));
        d.push('\n');
        let _ = writeln!(l, "{} {}", sci(r.p, digits), sci(r.lambda, digits));
    }
    Ok((d, l))
}

/// Sampled trajectory `tau,x,p,u,v,z`.
pub fn trajectory_csv(samples: &[AtomState], digits: usize) -> String {
    let mut out = format!("{UNITS_HEADER}\ntau,x,p,u,v,z\n");
    for s in samples {
        let row = [s.tau, s.x, s.p, s.u, s.v, s.z].map(|v| sci(v, digits));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn jumps_csv(jumps: &[JumpEvent], digits: usize) -> String {
    let mut out = format!("{UNITS_HEADER}\ntau_j,p_j\n");
    for j in jumps {
        let _ = writeln!(out, "{},{}", sci(j.tau_j, digits), sci(j.p_j, digits));
    }
    out
}

/// Per-trajectory exponents; failed integrations carry `nan`.
pub fn lyapunov_csv(initial: &[AtomState], exponents: &[Option<f64>], stats: &ChaosStats, digits: usize) -> String {
    let mut out = format!("{UNITS_HEADER}\nindex,x0,p0,lambda,chaotic\n");
    for (i, (s, l)) in initial.iter().zip(exponents).enumerate() {
        let lambda = l.unwrap_or(f64::NAN);
        let class = match l {
            Some(v) if *v > stats.threshold => "1",
            Some(_) => "0",
            None => "failed",
        };
        let _ = writeln!(
            out,
            "{i},{},{},{},{class}",
            sci(s.x, digits),
            sci(s.p, digits),
            sci(lambda, digits)
        );
    }
    out
}

/// Moment time series of a cloud with the ballistic-plus-diffusive model
/// `σ_x²(τ)` evaluated at the measured `D_p` (`nan` without an estimate).
pub fn cloud_csv(cloud: &CloudStats, params: &SimParams, digits: usize) -> String {
    let m = &cloud.moments;
    let mut out = format!(
        "{UNITS_HEADER}\n# L in m, T in K\ntau,mean_x,var_x,mean_p,var_p,var_x_model,L,T\n"
    );
    let (vx0, vp0) = (m.var_x.first().copied(), m.var_p.first().copied());
    for k in 0..m.times.len() {
        let model = match (cloud.diffusion.d_p, vx0, vp0) {
            (Some(d), Some(vx0), Some(vp0)) => analytic::cloud_variance(vx0, vp0, d, params, m.times[k]),
            _ => f64::NAN,
        };
        let row = [
            m.times[k],
            m.mean_x[k],
            m.var_x[k],
            m.mean_p[k],
            m.var_p[k],
            model,
            cloud.cloud_size[k],
            cloud.temperature[k],
        ]
        .map(|v| sci(v, digits));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Analytic diffusion laws on a momentum grid. `D_blend` is evaluated at the
/// given chaos probability.
pub fn analytic_csv(params: &SimParams, grid: &[f64], lambda: f64, digits: usize) -> Result<String> {
    let mut out = format!("{UNITS_HEADER}\n# D_blend at Lambda = {}\np,D_ch,D_reg,D_reg_osc,D_blend,mean_crossings\n", sci(lambda, digits));
    for &p in grid {
        let row = [
            p,
            analytic::d_chaotic(params, p),
            analytic::d_regular(params, p),
            analytic::d_regular_with(params, p, analytic::RegularForm::Oscillatory),
            analytic::d_blended(params, p, lambda)?,
            analytic::mean_crossings(params, p),
        ]
        .map(|v| sci(v, digits));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: f64, lambda: f64) -> SweepTableRow {
        let params = SimParams::cesium(-0.01);
        SweepTableRow {
            p,
            lambda,
            d_measured: 0.1,
            d_stderr: 0.01,
            d_ch: analytic::d_chaotic(&params, p),
            d_reg: analytic::d_regular(&params, p),
            d_blend: analytic::d_blended(&params, p, lambda).unwrap(),
            flags: vec![],
        }
    }

    #[test]
    fn sci_has_requested_digits() {
        assert_eq!(sci(0.125275, 9), "1.25275000e-1");
        assert_eq!(sci(f64::NAN, 9), "nan");
        let x = 0.1 + 0.2;
        assert_eq!(sci(x, DEFAULT_DIGITS).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn sweep_table_round_trip() {
        let mut rows = vec![row(1000.0, 1.0), row(1234.5678, 0.25)];
        rows[1].flags = vec![SweepFlag::NonBallistic, SweepFlag::Unreliable];
        rows[1].d_measured = f64::NAN;
        let text = sweep_table_csv(&rows, DEFAULT_DIGITS);
        assert!(text.starts_with("# units"));
        let back = parse_sweep_table(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rows[0]);
        assert!(back[1].d_measured.is_nan());
        assert_eq!(back[1].flags, rows[1].flags);
    }

    #[test]
    fn single_row_plot_files() {
        let (d, l) = plot_columns(&[row(1000.0, 0.5)], 9).unwrap();
        let data = |s: &str| s.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data(&d), 1);
        assert_eq!(data(&l), 1);
        assert!(plot_columns(&[], 9).is_err());
    }

    #[test]
    fn analytic_table_values() {
        let text = analytic_csv(&SimParams::cesium(-0.01), &[1e3, 1e4], 0.5, 9).unwrap();
        let d_ch: Vec<f64> = text
            .lines()
            .skip(3)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!((d_ch[0] - 1.25275e-1).abs() < 1e-12);
        assert!((d_ch[1] - 1.525e-3).abs() < 1e-13);
    }
}
