//! Artifact writers. Every float is printed with 17 significant digits so a
//! run's files are a pure function of its inputs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};
use stomix_core::spectral::{PhaseNoiseCurve, Spectrum};
use stomix_core::TraceSet;

/// Fixed 17-significant-digit float.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON with floats in [`num`] format.
struct Sig17<'a>(PrettyFormatter<'a>);

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(num(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .expect("artifact types serialize infallibly");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects the files of one run directory, in write order.
pub struct ArtifactDir {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifacts(&self) -> &[String] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> io::Result<()> {
        self.write_bytes(name, to_json(value).as_bytes())
    }

    /// Writes a table; `None` cells are left empty.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: &[Vec<Option<f64>>],
    ) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|c| c.map(num).unwrap_or_default()))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.write_bytes(name, &bytes)
    }

    /// `time_s` followed by `osc{j}_{column}` for every channel.
    pub fn write_trace(&mut self, name: &str, trace: &TraceSet) -> io::Result<()> {
        let mut header = vec!["time_s".to_string()];
        for (j, ch) in trace.channels.iter().enumerate() {
            header.extend(ch.columns().iter().map(|(c, _)| format!("osc{j}_{c}")));
        }
        let rows: Vec<Vec<Option<f64>>> = (0..trace.len())
            .map(|k| {
                let mut row = vec![Some(trace.time(k))];
                for ch in &trace.channels {
                    row.extend(ch.columns().iter().map(|(_, v)| Some(v[k])));
                }
                row
            })
            .collect();
        self.write_csv(name, &header, &rows)
    }

    pub fn write_spectrum(&mut self, name: &str, s: &Spectrum) -> io::Result<()> {
        let rows: Vec<Vec<Option<f64>>> = s
            .frequencies
            .iter()
            .zip(&s.psd)
            .map(|(f, p)| vec![Some(*f), Some(*p)])
            .collect();
        self.write_csv(name, &["freq_hz".into(), "psd_v2_per_hz".into()], &rows)
    }

    pub fn write_phase_noise(&mut self, name: &str, c: &PhaseNoiseCurve) -> io::Result<()> {
        let rows: Vec<Vec<Option<f64>>> = c
            .offsets
            .iter()
            .zip(&c.l_dbc_per_hz)
            .map(|(f, l)| vec![Some(*f), Some(*l)])
            .collect();
        self.write_csv(name, &["offset_hz".into(), "l_dbc_per_hz".into()], &rows)
    }
}

/// Summary of a successful run, written last.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// SHA-256 of the `config.json` artifact.
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub software_version: String,
    pub wall_time_s: f64,
}

/// Writes `manifest.json` through a temporary file and a rename.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> io::Result<()> {
    let tmp = dir.join(".manifest.json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(to_json(manifest).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, dir.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-0.375), "-3.7500000000000000e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(
            to_json(&[1.0, 1024.0]),
            "[\n  1.0000000000000000e0,\n  1.0240000000000000e3\n]\n"
        );
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
