use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use ssmimpute::imputers::{vocabulary, CoefficientPaths, PooledEstimate, PooledValue, TraceEntry};
use ssmimpute::io::format_value;
use ssmimpute::{Error, Result};

/// Provenance written next to every CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub command: &'static str,
    pub file: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// SHA-256 of the input data file, when there is one.
    pub data_sha256: Option<String>,
    pub method: Option<String>,
    pub method_vocabulary: String,
    pub mechanism_vocabulary: &'static str,
    pub version: &'static str,
}

impl Metadata {
    pub fn new(command: &'static str, config_sha256: String, seed: Option<u64>) -> Self {
        Self {
            command,
            file: String::new(),
            config_sha256,
            seed,
            data_sha256: None,
            method: None,
            method_vocabulary: vocabulary(),
            mechanism_vocabulary: "mcar,mar,mnar",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Output directory that records every CSV it receives.
pub struct OutDir {
    root: PathBuf,
    meta: Metadata,
    /// Input file that no output may replace.
    input: Option<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path, meta: Metadata, input: Option<&Path>) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let input = input.map(Path::canonicalize).transpose()?;
        Ok(Self { root: root.to_path_buf(), meta, input })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let (Some(input), Ok(existing)) = (&self.input, path.canonicalize()) {
            if *input == existing {
                return Err(Error::Config(format!("output {} would overwrite the input file", path.display())));
            }
        }
        Ok(path)
    }

    /// Write a CSV through `body` and its metadata sidecar.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.path(name)?)?);
        body(&mut w)?;
        w.flush()?;
        let meta = Metadata { file: name.to_string(), ..self.meta.clone() };
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        self.json(&format!("{stem}.meta.json"), &meta)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        std::fs::write(self.path(name)?, text)?;
        Ok(())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name)?, text)?;
        Ok(())
    }
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

const ESTIMATE_HEADER: [&str; 8] = ["t", "coefficient", "estimate", "se", "lower", "upper", "within", "between"];

fn estimate_record(t: usize, name: &str, v: &PooledValue) -> Vec<String> {
    let (lo, hi) = v.interval();
    vec![
        (t + 1).to_string(),
        name.to_string(),
        format_value(v.mean),
        format_value(v.se()),
        format_value(lo),
        format_value(hi),
        format_value(v.within),
        format_value(v.between),
    ]
}

/// Pooled coefficient paths with 90% bounds, one row per coefficient and time.
pub fn write_pooled<W: Write>(w: W, pooled: &PooledEstimate) -> Result<()> {
    let mut w = csv_writer(w);
    w.write_record(ESTIMATE_HEADER)?;
    for (i, name) in pooled.names().iter().enumerate() {
        for (t, v) in pooled.path(i).iter().enumerate() {
            w.write_record(estimate_record(t, name, v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Smoothed paths of a single fit in the same layout as [`write_pooled`].
pub fn write_paths<W: Write>(w: W, paths: &CoefficientPaths) -> Result<()> {
    let mut w = csv_writer(w);
    w.write_record(ESTIMATE_HEADER)?;
    for (i, name) in paths.names.iter().enumerate() {
        for t in 0..paths.len() {
            let v = PooledValue { mean: paths.means[i][t], within: paths.vars[i][t], between: 0.0, total: paths.vars[i][t] };
            w.write_record(estimate_record(t, name, &v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Convergence trace; the last row carries the overall convergence flag.
pub fn write_trace<W: Write>(w: W, trace: &[TraceEntry], converged: bool) -> Result<()> {
    let mut w = csv_writer(w);
    w.write_record([
        "iteration",
        "loglik",
        "loglik_change",
        "max_coefficient_change",
        "param_change",
        "mle_converged",
        "change_points",
        "converged",
    ])?;
    for (k, e) in trace.iter().enumerate() {
        let last = k + 1 == trace.len();
        w.write_record([
            e.iteration.to_string(),
            format_value(e.loglik),
            format_value(e.loglik_change),
            format_value(e.max_coefficient_change),
            format_value(e.param_change),
            e.mle_converged.to_string(),
            change_point_field(&e.change_points),
            if last { converged.to_string() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn change_point_field(cps: &BTreeMap<String, Vec<usize>>) -> String {
    cps.iter()
        .map(|(name, c)| format!("{name}:{}", c.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per detected change point: the last time of the earlier period.
pub fn write_change_points<W: Write>(w: W, cps: &BTreeMap<String, Vec<usize>>) -> Result<()> {
    let mut w = csv_writer(w);
    w.write_record(["coefficient", "period_end"])?;
    for (name, points) in cps {
        for c in points {
            w.write_record([name.clone(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
