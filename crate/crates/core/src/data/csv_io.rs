use std::io::{Read, Write};
use std::path::Path;

use gaitlab_numerics::Tensor;

use super::{channel_names, phase_from_strides, Recording, Terrain, IMU_CHANNELS, SAMPLE_RATE_HZ};
use crate::{Error, Result};

pub const CSV_FIXED_COLUMNS: [&str; 6] = ["t", "subject", "terrain", "stride_id", "phase_pct", "rate_pct"];
const PHASE_TOLERANCE: f64 = 1e-6;

fn header() -> Vec<String> {
    CSV_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(channel_names())
        .collect()
}

pub fn write_csv<W: Write>(rec: &Recording, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(header()).map_err(fmt)?;
    let mut row = Vec::with_capacity(CSV_FIXED_COLUMNS.len() + IMU_CHANNELS);
    for n in 0..rec.len() {
        row.clear();
        let ps = rec.phase_truth[n];
        row.push((n as f64 / SAMPLE_RATE_HZ).to_string());
        row.push(rec.subject_id.to_string());
        row.push(rec.terrain[n].to_string());
        row.push(rec.stride_of(n).to_string());
        row.push((ps.phase * 100.0).to_string());
        row.push((ps.rate * 100.0).to_string());
        row.extend((0..IMU_CHANNELS).map(|c| rec.sample(c, n).to_string()));
        w.write_record(&row).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Recording> {
    let format = |msg: String| Error::format(origin, msg);
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| format(format!("malformed header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format(format!("missing column {name:?}")))
    };
    let fixed: Vec<usize> = CSV_FIXED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let chan: Vec<usize> = channel_names().iter().map(|c| col(c)).collect::<Result<_>>()?;
    let [_, subj_c, ter_c, sid_c, ph_c, rate_c] = fixed[..] else { unreachable!() };

    let mut subject = None;
    let mut terrain = Vec::new();
    let mut stride_ids: Vec<usize> = Vec::new();
    let mut phase_pct = Vec::new();
    let mut rate_pct = Vec::new();
    let mut cols: Vec<Vec<f32>> = vec![Vec::new(); IMU_CHANNELS];
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format(format!("line {line}: {e}")))?;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|_| format(format!("line {line}: bad number {:?} in column {}", field(c), &headers[c])))
        };
        let s: u32 = field(subj_c)
            .parse()
            .map_err(|_| format(format!("line {line}: bad subject {:?}", field(subj_c))))?;
        match subject {
            None => subject = Some(s),
            Some(prev) if prev != s => return Err(format(format!("line {line}: subject changes from {prev} to {s}"))),
            _ => {}
        }
        terrain.push(field(ter_c).parse::<Terrain>().map_err(|e| format(format!("line {line}: {e}")))?);
        stride_ids.push(
            field(sid_c)
                .parse()
                .map_err(|_| format(format!("line {line}: bad stride_id {:?}", field(sid_c))))?,
        );
        phase_pct.push(num(ph_c)?);
        rate_pct.push(num(rate_c)?);
        for (k, &c) in chan.iter().enumerate() {
            let v: f32 = field(c)
                .parse()
                .map_err(|_| format(format!("line {line}: bad number {:?} in column {}", field(c), &headers[c])))?;
            cols[k].push(v);
        }
    }
    let subject_id = subject.ok_or_else(|| format("no data rows".into()))?;

    let mut stride_starts = vec![0];
    if stride_ids[0] != 0 {
        return Err(format("non-monotone stride indices: first stride_id must be 0".into()));
    }
    for n in 1..stride_ids.len() {
        let (a, b) = (stride_ids[n - 1], stride_ids[n]);
        if b == a + 1 {
            stride_starts.push(n);
        } else if b != a {
            return Err(format(format!("non-monotone stride indices at line {}: {a} -> {b}", n + 2)));
        }
    }
    let len = terrain.len();
    let labels = phase_from_strides(&stride_starts, len).map_err(|e| format(e.to_string()))?;
    for (n, ps) in labels.iter().enumerate() {
        if (ps.phase * 100.0 - phase_pct[n]).abs() / 100.0 > PHASE_TOLERANCE
            || (ps.rate * 100.0 - rate_pct[n]).abs() / 100.0 > PHASE_TOLERANCE
        {
            return Err(format(format!(
                "phase inconsistency at line {}: file has ({}, {}) %, strides imply ({}, {}) %",
                n + 2,
                phase_pct[n],
                rate_pct[n],
                ps.phase * 100.0,
                ps.rate * 100.0
            )));
        }
    }
    let channels = Tensor::from_vec(&[IMU_CHANNELS, len], cols.concat())?;
    Recording::new(subject_id, channels, terrain, stride_starts)
}

pub fn export_csv(rec: &Recording, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rec, std::io::BufWriter::new(f))
}

pub fn import_csv(path: &Path) -> Result<Recording> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), path)
}

/// File name used for a subject's recording inside a dataset directory.
pub fn recording_file_name(subject_id: u32) -> String {
    format!("subject_{subject_id:02}.csv")
}

/// Reads every `*.csv` in `dir` (sorted by name); subjects must be unique.
pub fn import_dataset(dir: &Path) -> Result<Vec<Recording>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no recordings (*.csv) in {}", dir.display())));
    }
    let recs: Vec<Recording> = paths.iter().map(|p| import_csv(p)).collect::<Result<_>>()?;
    let mut ids: Vec<u32> = recs.iter().map(|r| r.subject_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate subject ids in {}", dir.display())));
    }
    Ok(recs)
}
