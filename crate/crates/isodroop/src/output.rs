//! CSV and report writers, and readers for the files this crate writes.
//!
//! Every CSV starts with a `# isodroop <kind> v<version>` line, then a header row. Numbers carry
//! nine significant digits.

use std::io::{self, BufRead, BufReader, Read, Write};

use isodroop_core::smallsignal::{participation, EigenReport, LinearModel};
use isodroop_core::steady_state::DroopEquilibrium;
use isodroop_core::timedomain::{inverter_pairs, Metrics, SimulationTrace};
use num_complex::Complex64;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_line(kind: &str) -> String {
    format!("# isodroop {kind} v{SCHEMA_VERSION}")
}

/// Nine significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

fn csv_writer<W: Write>(mut w: W, kind: &str) -> io::Result<csv::Writer<W>> {
    writeln!(w, "{}", schema_line(kind))?;
    Ok(csv::WriterBuilder::new().from_writer(w))
}

fn flush<W: Write>(w: csv::Writer<W>) -> io::Result<()> {
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Checks the schema line and returns a CSV reader over the rest.
fn csv_reader<R: Read>(r: R, kind: &str) -> io::Result<csv::Reader<BufReader<R>>> {
    let mut r = BufReader::new(r);
    let mut first = String::new();
    r.read_line(&mut first)?;
    if first.trim_end() != schema_line(kind) {
        return Err(io_err(format!("expected '{}', found '{}'", schema_line(kind), first.trim_end())));
    }
    Ok(csv::ReaderBuilder::new().from_reader(r))
}

pub fn write_trace<W: Write>(w: W, trace: &SimulationTrace) -> io::Result<()> {
    let mut c = csv_writer(w, "trace")?;
    c.write_record(trace.column_names())?;
    for s in 0..trace.len() {
        c.write_record(trace.row(s).iter().map(|x| fmt_num(*x)))?;
    }
    flush(c)
}

/// Reads a trace CSV. Only the sampled columns are restored; nominal values are left at zero.
pub fn read_trace<R: Read>(r: R) -> io::Result<SimulationTrace> {
    let mut c = csv_reader(r, "trace")?;
    let headers = c.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with('v') && h[1..].parse::<usize>().is_ok()).count();
    let mut rows = Vec::new();
    for rec in c.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|f| f.parse::<f64>().map_err(io_err)).collect::<io::Result<Vec<f64>>>()?);
    }
    let mut trace = SimulationTrace::from_rows(n, &rows).ok_or_else(|| io_err("row width does not match the header"))?;
    if trace.column_names() != headers.iter().collect::<Vec<_>>() {
        return Err(io_err("unexpected trace columns"));
    }
    trace.inverter_count = n;
    Ok(trace)
}

/// One eigenvalue with the state that participates most in its mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEigenvalue {
    pub value: Complex64,
    pub label: String,
}

/// Eigenvalues of `model` labeled by their largest participation factor.
pub fn labeled_spectrum(model: &LinearModel, report: &EigenReport) -> Vec<LabeledEigenvalue> {
    report
        .eigenvalues
        .iter()
        .map(|l| {
            let label = participation(&model.system_matrix, *l)
                .ok()
                .and_then(|p| {
                    p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| model.state_labels[i].clone())
                })
                .unwrap_or_default();
            LabeledEigenvalue { value: *l, label }
        })
        .collect()
}

const EIGEN_HEADER: [&str; 4] = ["re", "im", "label", "parameter"];

fn eigen_rows<W: Write>(c: &mut csv::Writer<W>, spectrum: &[LabeledEigenvalue], parameter: Option<f64>) -> io::Result<()> {
    let p = parameter.map(fmt_num).unwrap_or_default();
    for e in spectrum {
        c.write_record([fmt_num(e.value.re), fmt_num(e.value.im), e.label.clone(), p.clone()])?;
    }
    Ok(())
}

pub fn write_eigen<W: Write>(w: W, spectrum: &[LabeledEigenvalue], parameter: Option<f64>) -> io::Result<()> {
    let mut c = csv_writer(w, "eigen")?;
    c.write_record(EIGEN_HEADER)?;
    eigen_rows(&mut c, spectrum, parameter)?;
    flush(c)
}

/// Eigenvalue rows of every sweep point, stacked, with the parameter column filled.
pub fn write_sweep<W: Write>(w: W, points: &[(f64, Vec<LabeledEigenvalue>)]) -> io::Result<()> {
    let mut c = csv_writer(w, "sweep")?;
    c.write_record(EIGEN_HEADER)?;
    for (p, spectrum) in points {
        eigen_rows(&mut c, spectrum, Some(*p))?;
    }
    flush(c)
}

/// One row per sweep point: abscissa and stability, or the error that stopped the point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummaryRow {
    pub parameter: f64,
    pub outcome: Result<EigenReport, String>,
}

pub fn write_sweep_summary<W: Write>(w: W, rows: &[SweepSummaryRow]) -> io::Result<()> {
    let mut c = csv_writer(w, "sweep-summary")?;
    c.write_record(["parameter", "spectral_abscissa", "stable", "dominant_label", "error"])?;
    for r in rows {
        let p = fmt_num(r.parameter);
        match &r.outcome {
            Ok(rep) => c.write_record([
                p,
                fmt_num(rep.spectral_abscissa),
                rep.stable.to_string(),
                rep.dominant_mode_label.clone(),
                String::new(),
            ])?,
            Err(e) => c.write_record([p, String::new(), String::new(), String::new(), e.clone()])?,
        }
    }
    flush(c)
}

/// Reads an eigen or sweep CSV back as `(re, im, label, parameter)` rows.
pub fn read_eigen<R: Read>(r: R, kind: &str) -> io::Result<Vec<(Complex64, String, Option<f64>)>> {
    let mut c = csv_reader(r, kind)?;
    if c.headers()?.iter().collect::<Vec<_>>() != EIGEN_HEADER {
        return Err(io_err("unexpected eigenvalue columns"));
    }
    let mut out = Vec::new();
    for rec in c.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(io_err);
        let p = if rec[3].is_empty() { None } else { Some(num(3)?) };
        out.push((Complex64::new(num(0)?, num(1)?), rec[2].to_string(), p));
    }
    Ok(out)
}

/// Per-inverter phasors of the droop equilibrium, then a `pcc` row with the voltage only.
pub fn write_equilibrium<W: Write>(w: W, eq: &DroopEquilibrium) -> io::Result<()> {
    let mut c = csv_writer(w, "equilibrium")?;
    c.write_record(["node", "E", "v_amp", "v_phase", "i_amp", "i_phase", "P", "Q"])?;
    let s = &eq.solution;
    for k in 0..s.len() {
        c.write_record([
            (k + 1).to_string(),
            fmt_num(eq.voltage_magnitudes[k]),
            fmt_num(s.voltage_amplitude[k]),
            fmt_num(s.voltage_phase[k]),
            fmt_num(s.current_amplitude[k]),
            fmt_num(s.current_phase[k]),
            fmt_num(s.active_power[k]),
            fmt_num(s.reactive_power[k]),
        ])?;
    }
    let e = String::new();
    c.write_record([
        "pcc".into(),
        e.clone(),
        fmt_num(s.pcc_voltage.norm()),
        fmt_num(s.pcc_voltage.arg()),
        e.clone(),
        e.clone(),
        e.clone(),
        e,
    ])?;
    flush(c)
}

/// Rows of an equilibrium CSV as `(node, values)`; empty fields come back as NaN.
pub fn read_equilibrium<R: Read>(r: R) -> io::Result<Vec<(String, Vec<f64>)>> {
    let mut c = csv_reader(r, "equilibrium")?;
    let mut out = Vec::new();
    for rec in c.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>().map_err(io_err) })
            .collect::<io::Result<Vec<f64>>>()?;
        out.push((rec[0].to_string(), values));
    }
    Ok(out)
}

/// Flat `key = value` report; indices are 1-based, pairs as in the trace columns.
pub fn write_metrics<W: Write>(mut w: W, m: &Metrics) -> io::Result<()> {
    writeln!(w, "{}", schema_line("metrics"))?;
    writeln!(w, "window_start = {}", fmt_num(m.window_start))?;
    writeln!(w, "window_end = {}", fmt_num(m.window_end))?;
    let n = m.active_power.len();
    for k in 0..n {
        let i = k + 1;
        writeln!(w, "P{i} = {}", fmt_num(m.active_power[k]))?;
        writeln!(w, "Q{i} = {}", fmt_num(m.reactive_power[k]))?;
        writeln!(w, "v{i}_amp = {}", fmt_num(m.voltage_phasor[k].norm()))?;
        writeln!(w, "v{i}_phase = {}", fmt_num(m.voltage_phasor[k].arg()))?;
        writeln!(w, "i{i}_amp = {}", fmt_num(m.current_phasor[k].norm()))?;
        writeln!(w, "i{i}_phase = {}", fmt_num(m.current_phasor[k].arg()))?;
        writeln!(w, "thd{i} = {}", fmt_num(m.voltage_thd[k]))?;
        let st = m.settling_time[k].map(fmt_num).unwrap_or_else(|| "none".into());
        writeln!(w, "settling_time{i} = {st}")?;
    }
    for (p, (j, k)) in inverter_pairs(n).iter().enumerate() {
        let tag = format!("{}{}", j + 1, k + 1);
        writeln!(w, "p_share_{tag} = {}", fmt_num(m.p_share[p]))?;
        writeln!(w, "q_share_{tag} = {}", fmt_num(m.q_share[p]))?;
        writeln!(w, "icirc_{tag} = {}", fmt_num(m.circulating_amplitude[p]))?;
    }
    writeln!(w, "pcc_amp = {}", fmt_num(m.pcc_phasor.norm()))?;
    writeln!(w, "pcc_phase = {}", fmt_num(m.pcc_phasor.arg()))?;
    writeln!(w, "pcc_regulation_error = {}", fmt_num(m.pcc_regulation_error))?;
    writeln!(w, "pcc_thd = {}", fmt_num(m.pcc_thd))?;
    let ev = m.settling_event.map(fmt_num).unwrap_or_else(|| "none".into());
    writeln!(w, "settling_event = {ev}")?;
    for warning in &m.warnings {
        writeln!(w, "warning = {warning}")?;
    }
    Ok(())
}

/// Parses a metrics report into ordered `(key, value)` pairs.
pub fn read_metrics<R: Read>(r: R) -> io::Result<Vec<(String, String)>> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(l)) if l == schema_line("metrics") => {}
        _ => return Err(io_err("missing metrics schema line")),
    }
    let mut out = Vec::new();
    for l in lines {
        let l = l?;
        let (k, v) = l.split_once(" = ").ok_or_else(|| io_err(format!("bad report line '{l}'")))?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use isodroop_core::presets;
    use isodroop_core::smallsignal::{eigen_report, linearize, operating_point};
    use isodroop_core::steady_state::droop_equilibrium;
    use isodroop_core::timedomain::{measure_metrics, run, Scenario};

    fn short_trace() -> SimulationTrace {
        let mut sc = Scenario::new(presets::microgrid(3, isodroop_core::net::LoadModel::Resistive { resistance: 20.0 }), 0.02);
        sc.decimation = 20;
        run(&sc).unwrap()
    }

    #[test]
    fn numbers_have_nine_significant_digits() {
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_num(-169.7056274847714), "-1.69705627e2");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }

    #[test]
    fn trace_csv_round_trips() {
        let trace = short_trace();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# isodroop trace v1\nt,v_pcc,v1,i1,iL1,E1,P1,Q1,v2,"));
        assert!(text.lines().nth(1).unwrap().ends_with("Q3,icirc_12,icirc_13,icirc_23"));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), trace.len());
        for s in 0..trace.len() {
            for (a, b) in trace.row(s).iter().zip(back.row(s)) {
                assert!((a - b).abs() <= 5e-9 * a.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn foreign_files_are_rejected() {
        assert!(read_trace("t,v_pcc\n0,0\n".as_bytes()).is_err());
        assert!(read_trace("# isodroop trace v2\nt,v_pcc\n".as_bytes()).is_err());
        assert!(read_metrics("P1 = 3\n".as_bytes()).is_err());
    }

    #[test]
    fn eigen_and_sweep_csv_round_trip() {
        let cfg = presets::two_inverter_2p2();
        let model = linearize(&operating_point(&cfg).unwrap(), &cfg).unwrap();
        let report = eigen_report(&model).unwrap();
        let spectrum = labeled_spectrum(&model, &report);
        assert_eq!(spectrum.len(), model.state_labels.len());
        assert!(spectrum.iter().all(|e| model.state_labels.contains(&e.label)));
        let mut buf = Vec::new();
        write_eigen(&mut buf, &spectrum, None).unwrap();
        let back = read_eigen(buf.as_slice(), "eigen").unwrap();
        assert_eq!(back.len(), spectrum.len());
        for ((v, label, p), e) in back.iter().zip(&spectrum) {
            assert!((v - e.value).norm() <= 1e-8 * e.value.norm().max(1.0));
            assert_eq!(label, &e.label);
            assert_eq!(*p, None);
        }
        let mut buf = Vec::new();
        write_sweep(&mut buf, &[(0.5, spectrum.clone()), (1.0, spectrum.clone())]).unwrap();
        let back = read_eigen(buf.as_slice(), "sweep").unwrap();
        assert_eq!(back.len(), 2 * spectrum.len());
        assert_eq!(back.last().unwrap().2, Some(1.0));
    }

    #[test]
    fn sweep_summary_keeps_errors() {
        let mut buf = Vec::new();
        let rows = [SweepSummaryRow { parameter: 2.0, outcome: Err("domain error: bad".into()) }];
        write_sweep_summary(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("2.00000000e0,,,,domain error: bad\n"), "{text}");
    }

    #[test]
    fn equilibrium_csv_round_trips() {
        let eq = droop_equilibrium(&presets::sharing()).unwrap();
        let mut buf = Vec::new();
        write_equilibrium(&mut buf, &eq).unwrap();
        let rows = read_equilibrium(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].0, "2");
        assert!((rows[1].1[5] - eq.solution.active_power[1]).abs() <= 1e-8 * eq.solution.active_power[1].abs());
        assert_eq!(rows[2].0, "pcc");
        assert!(rows[2].1[0].is_nan());
        assert!((rows[2].1[1] - eq.solution.pcc_voltage.norm()).abs() < 1e-6);
    }

    #[test]
    fn metrics_report_is_flat_key_value() {
        let trace = short_trace();
        let m = measure_metrics(&trace, 1.0 / 60.0).unwrap();
        let mut buf = Vec::new();
        write_metrics(&mut buf, &m).unwrap();
        let kv = read_metrics(buf.as_slice()).unwrap();
        let get = |k: &str| kv.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone()).unwrap();
        assert_eq!(get("P2").parse::<f64>().unwrap(), fmt_num(m.active_power[1]).parse::<f64>().unwrap());
        assert!(get("p_share_23").parse::<f64>().is_ok());
        assert_eq!(get("settling_event"), "none");
        assert!(kv.iter().any(|(k, _)| k == "icirc_13"));
    }
}
