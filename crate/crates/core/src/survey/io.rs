//! Survey file formats.
//!
//! CSV: header `id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0,...,s{n-1}`, one
//! trace per LF-terminated line, `fb_sample` empty when unlabeled.
//!
//! Binary (little-endian): magic `FBGS`, u32 version (1), u32 trace count,
//! u32 samples per trace, f32 dt, then per trace u64 id, four f32
//! coordinates (src x, src y, rcv x, rcv y), i32 label (-1 when absent) and
//! the f32 samples.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Survey, Trace};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FBGS";
const VERSION: u32 = 1;
const FIXED_COLUMNS: [&str; 7] = ["id", "src_x", "src_y", "rcv_x", "rcv_y", "dt", "fb_sample"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurveyFormat {
    Csv,
    Binary,
}

impl SurveyFormat {
    /// `.bin` / `.fbgs` are binary, anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("fbgs") => SurveyFormat::Binary,
            _ => SurveyFormat::Csv,
        }
    }
}

fn survey_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_survey(path: &Path, format: SurveyFormat) -> Result<Survey> {
    let bytes = fs::read(path)?;
    let traces = match format {
        SurveyFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                line: 0,
                message: format!("file is not UTF-8: {e}"),
            })?;
            parse_csv(text)?
        }
        SurveyFormat::Binary => parse_binary(&bytes)?,
    };
    Survey::new(survey_name(path), traces)
}

pub fn save_survey(survey: &Survey, path: &Path, format: SurveyFormat) -> Result<()> {
    let bytes = match format {
        SurveyFormat::Csv => to_csv(survey)?.into_bytes(),
        SurveyFormat::Binary => to_binary(survey)?,
    };
    crate::fsio::write_atomic(path, &bytes)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| Error::Parse {
        line,
        message: format!("bad {name} value {field:?}: {e}"),
    })
}

pub(crate) fn parse_csv(text: &str) -> Result<Vec<Trace>> {
    let mut lines = text.split('\n').enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .filter(|l| !l.is_empty())
        .ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() <= FIXED_COLUMNS.len() || columns[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header starting with {}", FIXED_COLUMNS.join(",")),
        });
    }
    let n_samples = columns.len() - FIXED_COLUMNS.len();
    for (i, c) in columns[FIXED_COLUMNS.len()..].iter().enumerate() {
        if *c != format!("s{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected sample column s{i}, found {c:?}"),
            });
        }
    }

    let mut traces = Vec::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let fb_sample = match fields[6] {
            "" => None,
            f => Some(parse_field::<usize>(f, "fb_sample", line)?),
        };
        let samples = fields[7..]
            .iter()
            .map(|f| parse_field::<f32>(f, "sample", line))
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(samples.len(), n_samples);
        traces.push(Trace {
            id: parse_field(fields[0], "id", line)?,
            src: (
                parse_field(fields[1], "src_x", line)?,
                parse_field(fields[2], "src_y", line)?,
            ),
            rcv: (
                parse_field(fields[3], "rcv_x", line)?,
                parse_field(fields[4], "rcv_y", line)?,
            ),
            dt: parse_field(fields[5], "dt", line)?,
            fb_sample,
            samples,
        });
    }
    Ok(traces)
}

fn common_len(survey: &Survey) -> Result<usize> {
    survey.trace_len().ok_or_else(|| {
        Error::Validation("all traces must have the same length to be written".into())
    })
}

pub(crate) fn to_csv(survey: &Survey) -> Result<String> {
    let n = if survey.is_empty() { 0 } else { common_len(survey)? };
    let mut out = FIXED_COLUMNS.join(",");
    for i in 0..n {
        write!(out, ",s{i}").unwrap();
    }
    out.push('\n');
    for t in survey.traces() {
        write!(
            out,
            "{},{},{},{},{},{},",
            t.id, t.src.0, t.src.1, t.rcv.0, t.rcv.1, t.dt
        )
        .unwrap();
        if let Some(fb) = t.fb_sample {
            write!(out, "{fb}").unwrap();
        }
        for s in &t.samples {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("unexpected end of file at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.take().map(i32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take().map(f32::from_le_bytes)
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<Trace>> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: "bad magic, expected FBGS".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported survey version {version}"),
        });
    }
    let n_traces = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    let dt = r.f32()? as f64;
    let mut traces = Vec::with_capacity(n_traces.min(1 << 20));
    for _ in 0..n_traces {
        let id = r.u64()?;
        let src = (r.f32()? as f64, r.f32()? as f64);
        let rcv = (r.f32()? as f64, r.f32()? as f64);
        let fb = r.i32()?;
        let samples = (0..n_samples).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        traces.push(Trace {
            id,
            src,
            rcv,
            samples,
            dt,
            fb_sample: usize::try_from(fb).ok(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(traces)
}

fn to_binary(survey: &Survey) -> Result<Vec<u8>> {
    let n = if survey.is_empty() { 0 } else { common_len(survey)? };
    let mut out = Vec::with_capacity(20 + survey.len() * (28 + 4 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(survey.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(survey.dt as f32).to_le_bytes());
    for t in survey.traces() {
        out.extend_from_slice(&t.id.to_le_bytes());
        for c in [t.src.0, t.src.1, t.rcv.0, t.rcv.1] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        let fb = match t.fb_sample {
            Some(fb) => i32::try_from(fb)
                .map_err(|_| Error::Validation(format!("label {fb} too large")))?,
            None => -1,
        };
        out.extend_from_slice(&fb.to_le_bytes());
        for s in &t.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_ROWS: &str = "id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0,s1,s2,s3\n\
        1,0,0,10,0,0.002,2,0.1,0.2,0.3,0.4\n\
        2,0,0,20,0,0.002,,1,2,3,4\n\
        3,0,0,30.5,-1.25,0.002,0,-1,0,1,0\n";

    #[test]
    fn parses_three_rows() {
        let traces = parse_csv(THREE_ROWS).unwrap();
        let survey = Survey::new("t", traces).unwrap();
        assert_eq!(survey.len(), 3);
        assert!(survey.traces().iter().all(|t| t.samples.len() == 4));
        assert_eq!(survey.get(1).unwrap().fb_sample, Some(2));
        assert_eq!(survey.get(2).unwrap().fb_sample, None);
        assert_eq!(survey.get(3).unwrap().rcv, (30.5, -1.25));
        assert_eq!(survey.dt, 0.002);
    }

    #[test]
    fn csv_round_trip_is_byte_exact() {
        let survey = Survey::new("t", parse_csv(THREE_ROWS).unwrap()).unwrap();
        assert_eq!(to_csv(&survey).unwrap(), THREE_ROWS);
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0\n1,0,0,0,0,0.002,,1\n2,0,0,0,0,0.002,,x\n";
        match parse_csv(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = "id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0,s1\n1,0,0,0,0,0.002,,1\n";
        assert!(matches!(parse_csv(short), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_csv("a,b\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn label_past_end_is_validation_error() {
        let mut text = String::from("id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample");
        for i in 0..128 {
            write!(text, ",s{i}").unwrap();
        }
        text.push_str("\n7,0,0,0,0,0.002,130");
        for _ in 0..128 {
            text.push_str(",0");
        }
        text.push('\n');
        let err = Survey::new("t", parse_csv(&text).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0\n1,0,0,0,0,0.002,,1\n1,0,0,0,0,0.002,,2\n";
        let err = Survey::new("t", parse_csv(text).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let survey = Survey::new("t", parse_csv(THREE_ROWS).unwrap()).unwrap();
        let bytes = to_binary(&survey).unwrap();
        assert_eq!(&bytes[..4], b"FBGS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 20 + 3 * (8 + 16 + 4 + 16));
        // second trace is unlabeled
        let second = 20 + 44;
        assert_eq!(i32::from_le_bytes(bytes[second + 24..second + 28].try_into().unwrap()), -1);

        let back = parse_binary(&bytes).unwrap();
        for (a, b) in back.iter().zip(survey.traces()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.fb_sample, b.fb_sample);
            assert_eq!(a.rcv.1 as f32, b.rcv.1 as f32);
        }
        assert!(parse_binary(&bytes[..bytes.len() - 1]).is_err());
    }
}
