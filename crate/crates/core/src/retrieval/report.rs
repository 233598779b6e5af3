//! Results CSV, audit CSV, recall-curve SVG and content hashes.

use std::fmt::Write as _;
use std::io::Write;

use sha2::{Digest, Sha256};

use super::{AnalogyQuestion, AuditRow};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub regime: String,
    pub loss_mode: String,
    pub freeze_mode: String,
    pub seed: u64,
    pub k: usize,
    pub n_distractors: usize,
    pub recall: f64,
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "regime,loss_mode,freeze_mode,seed,k,n_distractors,recall")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.regime, r.loss_mode, r.freeze_mode, r.seed, r.k, r.n_distractors, r.recall
        )?;
    }
    Ok(())
}

pub fn write_audit_csv<W: Write>(rows: &[AuditRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "question_id,rank_of_first_positive")?;
    for r in rows {
        writeln!(out, "{},{}", r.question_id, r.rank_of_first_positive)?;
    }
    Ok(())
}

/// SHA-256 over every question's ids, query, positives and distractors.
pub fn question_set_hash(questions: &[AnalogyQuestion]) -> String {
    let mut h = Sha256::new();
    for q in questions {
        h.update((q.id as u64).to_le_bytes());
        h.update([q.regime as u8]);
        for id in q.query.iter().chain(&q.positives).chain(&q.distractors) {
            h.update(id.0.to_le_bytes());
        }
        h.update(u32::MAX.to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn sha256_hex(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgSeries {
    pub label: String,
    /// `(k, recall)` points.
    pub points: Vec<(usize, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Recall against k on a log10 k axis, one polyline per series.
pub fn recall_svg(title: &str, series: &[SvgSeries]) -> String {
    let (w, h) = (560.0, 360.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let kmax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(10)
        .max(2) as f64;
    let lmax = kmax.log10();
    let x = |k: usize| left + pw * (k.max(1) as f64).log10() / lmax;
    let y = |r: f64| top + ph * (1.0 - r.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13">{}</text>"#, left, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=5 {
        let r = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{r:.1}</text>"##,
            left + pw,
            left - 6.0,
            y(r) + 4.0,
            yy = y(r)
        );
    }
    let mut decade = 1usize;
    while decade as f64 <= kmax {
        let _ = writeln!(
            s,
            r##"<line x1="{xx:.1}" x2="{xx:.1}" y1="{top}" y2="{}" stroke="#ddd"/><text x="{xx:.1}" y="{}" text-anchor="middle">{decade}</text>"##,
            top + ph,
            top + ph + 16.0,
            xx = x(decade)
        );
        decade *= 10;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">k (log scale)</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">recall@k</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(k, r)| format!("{:.1},{:.1}", x(k), y(r))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 * i as f64 + 6.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
