//! Trace and reference-plan CSV files.

use std::io::{Read, Write};

use dcgrid_core::engine::TraceRecord;
use dcgrid_core::{Setpoint, Trace};
use serde::{Deserialize, Serialize};

pub const TRACE_HEADER: [&str; 27] = [
    "t", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "alpha1", "alpha3", "alpha4", "alpha6", "u1_raw", "u1",
    "u2_raw", "u2", "u3_raw", "u3", "v_pv", "v_b", "v_s", "r_load", "z7", "z8", "V_total",
];

/// One trace row. Floats are written in shortest round-trip form, so parsing
/// a written file reproduces these values bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    pub x5: f64,
    pub x6: f64,
    pub x7: f64,
    pub x8: f64,
    pub x9: f64,
    pub alpha1: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha6: f64,
    pub u1_raw: f64,
    pub u1: f64,
    pub u2_raw: f64,
    pub u2: f64,
    pub u3_raw: f64,
    pub u3: f64,
    pub v_pv: f64,
    pub v_b: f64,
    pub v_s: f64,
    pub r_load: f64,
    pub z7: f64,
    pub z8: f64,
    #[serde(rename = "V_total")]
    pub v_total: Option<f64>,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        let x = &r.state.phys;
        let d = &r.duties;
        Self {
            t: r.t,
            x1: x.x1,
            x2: x.x2,
            x3: x.x3,
            x4: x.x4,
            x5: x.x5,
            x6: x.x6,
            x7: x.x7,
            x8: x.x8,
            x9: x.x9,
            alpha1: r.state.alpha1,
            alpha3: r.state.alpha3,
            alpha4: r.state.alpha4,
            alpha6: r.state.alpha6,
            u1_raw: d.raw[0],
            u1: d.applied[0],
            u2_raw: d.raw[1],
            u2: d.applied[1],
            u3_raw: d.raw[2],
            u3: d.applied[2],
            v_pv: r.disturbance.v_pv,
            v_b: r.disturbance.v_b,
            v_s: r.disturbance.v_s,
            r_load: r.disturbance.r_load(),
            z7: r.z7,
            z8: r.z8,
            v_total: r.lyapunov.map(|l| l.v_total),
        }
    }
}

pub fn rows(trace: &Trace) -> Vec<TraceRow> {
    trace.records.iter().map(TraceRow::from).collect()
}

pub fn write_trace<W: Write>(w: W, rows: &[TraceRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(TRACE_HEADER)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace, checking the header and that `t` strictly increases.
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, String> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(format!("unexpected trace header: {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut out: Vec<TraceRow> = Vec::new();
    for (i, row) in rd.deserialize().enumerate() {
        let row: TraceRow = row.map_err(|e| e.to_string())?;
        if let Some(prev) = out.last() {
            if !(row.t > prev.t) {
                return Err(format!("row {}: t = {} does not increase", i + 2, row.t));
            }
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub interval: usize,
    pub valid_from: f64,
    pub valid_to: f64,
    pub x1_star: f64,
    pub x4_star: f64,
    pub x9_star: f64,
    pub x2_star: f64,
    pub x5_star: f64,
}

pub fn reference_rows(setpoints: &[Setpoint]) -> Vec<ReferenceRow> {
    setpoints
        .iter()
        .enumerate()
        .map(|(i, s)| ReferenceRow {
            interval: i,
            valid_from: s.refs.valid_from,
            valid_to: s.refs.valid_to,
            x1_star: s.refs.x1_star,
            x4_star: s.refs.x4_star,
            x9_star: s.refs.x9_star,
            x2_star: s.x2_star,
            x5_star: s.x5_star,
        })
        .collect()
}

pub fn write_references<W: Write>(w: W, rows: &[ReferenceRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_references<R: Read>(r: R) -> Result<Vec<ReferenceRow>, String> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TraceRow {
        TraceRow {
            t,
            x1: 780.0 + 1.0 / 3.0,
            x2: 1015.3333333333334,
            x3: 200.0,
            x4: 608.74,
            x5: 0.1 + 0.2,
            x6: -87.4,
            x7: 1234.5,
            x8: 1e-300,
            x9: 1000.0,
            alpha1: -0.0,
            alpha3: 5e-324,
            alpha4: 0.0,
            alpha6: 0.0,
            u1_raw: 0.2337,
            u1: 0.2337,
            u2_raw: 1.2,
            u2: 1.0,
            u3_raw: -0.1,
            u3: 0.0,
            v_pv: 800.0,
            v_b: 600.0,
            v_s: 1500.0,
            r_load: f64::INFINITY,
            z7: 1.0,
            z8: 2.0,
            v_total: None,
        }
    }

    #[test]
    fn header_and_exact_round_trip() {
        let mut rows = vec![row(0.0), row(1e-3)];
        rows[1].v_total = Some(std::f64::consts::PI);
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER.join(","));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
        assert!(back[0].alpha1.is_sign_negative());
    }

    #[test]
    fn non_increasing_time_is_rejected() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[row(1.0), row(1.0)]).unwrap();
        assert!(read_trace(buf.as_slice()).unwrap_err().contains("does not increase"));
    }

    #[test]
    fn empty_trace_still_has_header() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), TRACE_HEADER.join(","));
    }
}
