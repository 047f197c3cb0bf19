use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex;
use sha2::{Digest, Sha256};

use gkp_sim::gkp::{CodewordSet, LogicalLabel};
use gkp_sim::measure::PauliLabel;
use gkp_sim::sdf::SdfPulse;
use gkp_sim::tomography::ChiMatrix;
use gkp_sim::wigner::PhasePoint;

use crate::config::{parse_ld_order, parse_mode};
use crate::error::{Result, WorkbenchError};

type CMat = DMatrix<Complex<f64>>;

/// 17 significant digits: enough for f64 values to survive a text round trip
/// bit-for-bit.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| WorkbenchError::validation(format!("bad float {s:?} in {what}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| WorkbenchError::validation(format!("bad integer {s:?} in {what}")))
}

/// Splits "key = value" and returns the value after checking the key.
fn header_value<'a>(line: &'a str, key: &str, what: &str) -> Result<&'a str> {
    let (k, v) = line.split_once('=').ok_or_else(|| {
        WorkbenchError::validation(format!("{what}: expected `{key} = ...`, got {line:?}"))
    })?;
    if k.trim() != key {
        return Err(WorkbenchError::validation(format!(
            "{what}: expected header key `{key}`, got {:?}",
            k.trim()
        )));
    }
    Ok(v.trim())
}

fn check_magic(line: Option<&str>, magic: &str, what: &str) -> Result<()> {
    match line {
        Some(l) if l.trim() == magic => Ok(()),
        other => Err(WorkbenchError::validation(format!(
            "{what}: expected header {magic:?}, got {other:?}"
        ))),
    }
}

pub fn label_slug(label: LogicalLabel) -> &'static str {
    match label {
        LogicalLabel::PlusZ => "plus_z",
        LogicalLabel::MinusZ => "minus_z",
        LogicalLabel::PlusX => "plus_x",
        LogicalLabel::MinusX => "minus_x",
        LogicalLabel::PlusY => "plus_y",
        LogicalLabel::MinusY => "minus_y",
    }
}

pub fn render_waveform(pulse: &SdfPulse) -> String {
    let mut out = String::from("gkp-waveform v1\n");
    out.push_str(&format!("mode = {}\n", pulse.mode.as_str()));
    out.push_str(&format!("rabi_rate_rad_per_s = {}\n", fmt_f64(pulse.rabi_rate)));
    out.push_str(&format!("segment_duration_s = {}\n", fmt_f64(pulse.segment_duration)));
    out.push_str(&format!(
        "lamb_dicke_order = {}\n",
        match pulse.lamb_dicke_order.order() {
            1 => "first",
            _ => "third",
        }
    ));
    out.push_str(&format!("segments = {}\n", pulse.phi_r.len()));
    out.push_str("k\tphi_r_rad\tphi_b_rad\n");
    for k in 0..pulse.phi_r.len() {
        out.push_str(&format!("{k}\t{}\t{}\n", fmt_f64(pulse.phi_r[k]), fmt_f64(pulse.phi_b[k])));
    }
    out
}

pub fn parse_waveform(text: &str) -> Result<SdfPulse> {
    let what = "waveform";
    let mut lines = text.lines();
    check_magic(lines.next(), "gkp-waveform v1", what)?;
    let mode = parse_mode(header_value(lines.next().unwrap_or(""), "mode", what)?)?;
    let rabi = parse_f64(
        header_value(lines.next().unwrap_or(""), "rabi_rate_rad_per_s", what)?,
        what,
    )?;
    let dt =
        parse_f64(header_value(lines.next().unwrap_or(""), "segment_duration_s", what)?, what)?;
    let order =
        parse_ld_order(header_value(lines.next().unwrap_or(""), "lamb_dicke_order", what)?)?;
    let segments =
        parse_usize(header_value(lines.next().unwrap_or(""), "segments", what)?, what)?;
    let _columns = lines.next();
    let mut phi_r = Vec::with_capacity(segments);
    let mut phi_b = Vec::with_capacity(segments);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(WorkbenchError::validation(format!(
                "{what}: expected `k\\tphi_r\\tphi_b` rows, got {line:?}"
            )));
        }
        phi_r.push(parse_f64(cols[1], what)?);
        phi_b.push(parse_f64(cols[2], what)?);
    }
    if phi_r.len() != segments {
        return Err(WorkbenchError::validation(format!(
            "{what}: header promises {segments} segments, found {}",
            phi_r.len()
        )));
    }
    Ok(SdfPulse::new(mode, rabi, dt, phi_r, phi_b, order)?)
}

pub fn read_waveform(path: &Path) -> Result<SdfPulse> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", path.display())))?;
    parse_waveform(&text)
}

pub fn render_codewords(set: &CodewordSet, fock: usize, j_ratio: f64) -> String {
    let mut out = String::from("gkp-codewords v1\n");
    out.push_str(&format!("fock = {fock}\n"));
    out.push_str(&format!("j_ratio = {}\n", fmt_f64(j_ratio)));
    out.push_str(&format!("splitting = {}\n", fmt_f64(set.diagnostics.splitting)));
    out.push_str(&format!("gap = {}\n", fmt_f64(set.diagnostics.gap)));
    out.push_str(&format!("label_confidence = {}\n", fmt_f64(set.diagnostics.label_confidence)));
    for cw in &set.entries {
        out.push_str(&format!("[codeword {}]\n", cw.label.as_str()));
        out.push_str(&format!("delta_x_db = {}\n", fmt_f64(cw.delta_x_db)));
        out.push_str(&format!("delta_z_db = {}\n", fmt_f64(cw.delta_z_db)));
        out.push_str("n\tre\tim\n");
        for (n, a) in cw.state.amplitudes.iter().enumerate() {
            out.push_str(&format!("{n}\t{}\t{}\n", fmt_f64(a.re), fmt_f64(a.im)));
        }
    }
    out
}

pub fn render_squeezing(set: &CodewordSet) -> String {
    let mut out = String::from("gkp-squeezing v1\nstate\tdelta_x_db\tdelta_z_db\n");
    for cw in &set.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            cw.label.as_str(),
            fmt_f64(cw.delta_x_db),
            fmt_f64(cw.delta_z_db)
        ));
    }
    out
}

pub fn parse_squeezing(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let what = "squeezing table";
    let mut lines = text.lines();
    check_magic(lines.next(), "gkp-squeezing v1", what)?;
    let _columns = lines.next();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(WorkbenchError::validation(format!("{what}: bad row {line:?}")));
        }
        rows.push((cols[0].to_string(), parse_f64(cols[1], what)?, parse_f64(cols[2], what)?));
    }
    Ok(rows)
}

pub fn render_fidelity_table(rows: &[(String, f64)]) -> String {
    let mut out = String::from("gkp-fidelity-table v1\nkey\tvalue\n");
    for (k, v) in rows {
        out.push_str(&format!("{k}\t{}\n", fmt_f64(*v)));
    }
    out
}

pub fn parse_fidelity_table(text: &str) -> Result<Vec<(String, f64)>> {
    let what = "fidelity table";
    let mut lines = text.lines();
    check_magic(lines.next(), "gkp-fidelity-table v1", what)?;
    let _columns = lines.next();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| {
            WorkbenchError::validation(format!("{what}: bad row {line:?}"))
        })?;
        rows.push((k.to_string(), parse_f64(v, what)?));
    }
    Ok(rows)
}

pub fn render_matrix(name: &str, mat: &CMat) -> String {
    let mut out = String::from("gkp-matrix v1\n");
    out.push_str(&format!("name = {name}\n"));
    out.push_str(&format!("rows = {}\n", mat.nrows()));
    out.push_str(&format!("cols = {}\n", mat.ncols()));
    out.push_str("i\tj\tre\tim\n");
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            let v = mat[(i, j)];
            out.push_str(&format!("{i}\t{j}\t{}\t{}\n", fmt_f64(v.re), fmt_f64(v.im)));
        }
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<(String, CMat)> {
    let what = "matrix";
    let mut lines = text.lines();
    check_magic(lines.next(), "gkp-matrix v1", what)?;
    let name = header_value(lines.next().unwrap_or(""), "name", what)?.to_string();
    let rows = parse_usize(header_value(lines.next().unwrap_or(""), "rows", what)?, what)?;
    let cols = parse_usize(header_value(lines.next().unwrap_or(""), "cols", what)?, what)?;
    let _columns = lines.next();
    let mut mat = CMat::zeros(rows, cols);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 4 {
            return Err(WorkbenchError::validation(format!("{what}: bad row {line:?}")));
        }
        let (i, j) = (parse_usize(c[0], what)?, parse_usize(c[1], what)?);
        if i >= rows || j >= cols {
            return Err(WorkbenchError::validation(format!("{what}: index ({i},{j}) out of range")));
        }
        mat[(i, j)] = Complex::new(parse_f64(c[2], what)?, parse_f64(c[3], what)?);
    }
    Ok((name, mat))
}

fn axis_char(idx: usize) -> char {
    ['I', 'X', 'Y', 'Z'][idx]
}

/// Pauli-word labels in χ-matrix basis order.
pub fn chi_basis_labels(qubits: usize) -> Vec<String> {
    match qubits {
        1 => (0..4).map(|i| axis_char(i).to_string()).collect(),
        _ => {
            let mut out = Vec::with_capacity(16);
            for a in 0..4 {
                for b in 0..4 {
                    out.push(format!("{}{}", axis_char(a), axis_char(b)));
                }
            }
            out
        }
    }
}

/// Bar-chart export of χ: one row per element with basis-word labels.
pub fn render_chi_bars(chi: &ChiMatrix) -> String {
    let labels = chi_basis_labels(chi.qubits);
    let mut out = String::from("gkp-chi-bars v1\nrow\tcol\tre\tim\n");
    for (i, ri) in labels.iter().enumerate() {
        for (j, cj) in labels.iter().enumerate() {
            let v = chi.matrix[(i, j)];
            out.push_str(&format!("{ri}\t{cj}\t{}\t{}\n", fmt_f64(v.re), fmt_f64(v.im)));
        }
    }
    out
}

pub fn render_pauli_bars(bars: &BTreeMap<PauliLabel, f64>) -> String {
    let mut out = String::from("gkp-pauli-bars v1\nlabel\tvalue\n");
    for (label, v) in bars {
        out.push_str(&format!("{label}\t{}\n", fmt_f64(*v)));
    }
    out
}

pub fn render_wigner(label: &str, grid: &[PhasePoint], values: &[f64]) -> String {
    let mut out = String::from("gkp-wigner v1\n");
    out.push_str(&format!("label = {label}\n"));
    out.push_str(&format!("points = {}\n", grid.len()));
    out.push_str("x\tp\tw\n");
    for (pt, w) in grid.iter().zip(values) {
        out.push_str(&format!("{}\t{}\t{}\n", fmt_f64(pt.x), fmt_f64(pt.p), fmt_f64(*w)));
    }
    out
}

pub fn render_expectations(
    qubits: usize,
    kind: &str,
    blocks: &[(String, BTreeMap<PauliLabel, f64>)],
) -> String {
    let mut out = String::from("gkp-expectations v1\n");
    out.push_str(&format!("qubits = {qubits}\n"));
    out.push_str(&format!("kind = {kind}\n"));
    for (name, map) in blocks {
        out.push_str(&format!("[{name}]\n"));
        for (label, v) in map {
            out.push_str(&format!("{label}\t{}\n", fmt_f64(*v)));
        }
    }
    out
}

pub struct ExpectationsFile {
    pub qubits: usize,
    pub kind: String,
    /// Block name (e.g. "state" or "probe +Z,+X") → Pauli expectations.
    pub blocks: Vec<(String, BTreeMap<PauliLabel, f64>)>,
}

pub fn parse_expectations(text: &str) -> Result<ExpectationsFile> {
    let what = "expectations";
    let mut lines = text.lines();
    check_magic(lines.next(), "gkp-expectations v1", what)?;
    let qubits = parse_usize(header_value(lines.next().unwrap_or(""), "qubits", what)?, what)?;
    let kind = header_value(lines.next().unwrap_or(""), "kind", what)?.to_string();
    let mut blocks: Vec<(String, BTreeMap<PauliLabel, f64>)> = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            blocks.push((name.trim().to_string(), BTreeMap::new()));
            continue;
        }
        let (label, v) = line.split_once('\t').ok_or_else(|| {
            WorkbenchError::validation(format!("{what}: bad row {line:?}"))
        })?;
        let label: PauliLabel = label.trim().parse().map_err(|_| {
            WorkbenchError::validation(format!("{what}: bad Pauli label {label:?}"))
        })?;
        let block = blocks.last_mut().ok_or_else(|| {
            WorkbenchError::validation(format!("{what}: expectation row before any [block]"))
        })?;
        block.1.insert(label, parse_f64(v, what)?);
    }
    Ok(ExpectationsFile { qubits, kind, blocks })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// A result-bundle directory under construction. Tracks written files so the
/// final checksum listing covers exactly what this run produced.
pub struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| WorkbenchError::io(format!("creating {}: {e}", dir.display())))?;
        Ok(Bundle { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| WorkbenchError::io(format!("writing {}: {e}", path.display())))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Writes checksums.txt over everything except itself and timing.txt
    /// (wall-clock data would break run-to-run reproducibility).
    pub fn finalize(&mut self) -> Result<()> {
        let mut names: Vec<&String> = self
            .files
            .iter()
            .filter(|f| f.as_str() != "timing.txt" && f.as_str() != "checksums.txt")
            .collect();
        names.sort();
        let mut out = String::from("gkp-checksums v1\n");
        let mut bundle_digest = Sha256::new();
        for name in names {
            let path = self.dir.join(name);
            let bytes = std::fs::read(&path)
                .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", path.display())))?;
            let h = sha256_hex(&bytes);
            bundle_digest.update(name.as_bytes());
            bundle_digest.update(b"\0");
            bundle_digest.update(h.as_bytes());
            bundle_digest.update(b"\n");
            out.push_str(&format!("{h}  {name}\n"));
        }
        out.push_str(&format!("bundle = {}\n", hex::encode(bundle_digest.finalize())));
        self.write("checksums.txt", &out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gkp_sim::sdf::ModeLabel;
    use gkp_sim::sdf::LambDickeOrder;

    #[test]
    fn waveform_text_round_trip_is_bit_exact() {
        let pulse = SdfPulse::new(
            ModeLabel::Y,
            2.0 * std::f64::consts::PI * 2.4e3,
            1.7e-6 / 3.0,
            vec![0.0, 0.1234567890123456789, -1.0 / 3.0],
            vec![0.5, std::f64::consts::PI / 7.0, 2.0_f64.sqrt()],
            LambDickeOrder::Third,
        )
        .unwrap();
        let text = render_waveform(&pulse);
        let back = parse_waveform(&text).unwrap();
        assert_eq!(back.mode, ModeLabel::Y);
        assert_eq!(back.rabi_rate.to_bits(), pulse.rabi_rate.to_bits());
        assert_eq!(back.segment_duration.to_bits(), pulse.segment_duration.to_bits());
        for k in 0..3 {
            assert_eq!(back.phi_r[k].to_bits(), pulse.phi_r[k].to_bits());
            assert_eq!(back.phi_b[k].to_bits(), pulse.phi_b[k].to_bits());
        }
        assert_eq!(render_waveform(&back), text);
    }

    #[test]
    fn truncated_waveform_is_rejected() {
        let pulse = SdfPulse::new(
            ModeLabel::X,
            1.0,
            1e-6,
            vec![0.0, 0.5],
            vec![0.0, -0.5],
            LambDickeOrder::First,
        )
        .unwrap();
        let text = render_waveform(&pulse);
        let cut = text.lines().take(7).collect::<Vec<_>>().join("\n");
        assert!(parse_waveform(&cut).is_err());
        assert!(parse_waveform("gkp-waveform v2\nmode = x\n").is_err());
    }

    #[test]
    fn matrix_and_fidelity_table_round_trip() {
        let mut m = CMat::zeros(2, 3);
        m[(0, 1)] = Complex::new(0.1, -0.25);
        m[(1, 2)] = Complex::new(-1.0 / 7.0, 3.0);
        let text = render_matrix("chi", &m);
        let (name, back) = parse_matrix(&text).unwrap();
        assert_eq!(name, "chi");
        assert_eq!(back.nrows(), 2);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(back[(i, j)].re.to_bits(), m[(i, j)].re.to_bits());
                assert_eq!(back[(i, j)].im.to_bits(), m[(i, j)].im.to_bits());
            }
        }
        let rows = vec![("process_fidelity".to_string(), 0.9934567891234567)];
        let t2 = render_fidelity_table(&rows);
        let back2 = parse_fidelity_table(&t2).unwrap();
        assert_eq!(back2.len(), 1);
        assert_eq!(back2[0].1.to_bits(), rows[0].1.to_bits());
    }

    #[test]
    fn expectations_blocks_parse() {
        use gkp_sim::measure::PauliAxis;
        let mut m = BTreeMap::new();
        m.insert(PauliLabel::One(PauliAxis::X), 0.25);
        m.insert(PauliLabel::One(PauliAxis::Y), -0.5);
        m.insert(PauliLabel::One(PauliAxis::Z), 0.75);
        let text = render_expectations(1, "qst", &[("state".to_string(), m.clone())]);
        let file = parse_expectations(&text).unwrap();
        assert_eq!(file.qubits, 1);
        assert_eq!(file.kind, "qst");
        assert_eq!(file.blocks.len(), 1);
        assert_eq!(file.blocks[0].0, "state");
        assert_eq!(file.blocks[0].1, m);
    }

    #[test]
    fn bundle_checksums_cover_sorted_files_and_skip_timing() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::create(dir.path()).unwrap();
        b.write("b.txt", "bee\n").unwrap();
        b.write("a.txt", "ay\n").unwrap();
        b.write("timing.txt", "wall_seconds\t1.5\n").unwrap();
        b.finalize().unwrap();
        let text = std::fs::read_to_string(dir.path().join("checksums.txt")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "gkp-checksums v1");
        assert!(lines[1].ends_with("  a.txt"));
        assert!(lines[2].ends_with("  b.txt"));
        assert!(lines[3].starts_with("bundle = "));
        assert!(!text.contains("timing.txt"));
        assert!(lines[1].starts_with(&sha256_hex(b"ay\n")));
    }
}
